#pragma once

// U-Net segmentation networks, the three-member committee and checkpoints.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/nn.hpp"
#include "crl/rng.hpp"
#include "crl/types.hpp"

namespace crl {

struct ModelConfig {
    int in_channels = 1;
    int classes = 2;  // background, foreground
    int depth = 3;
    int base_channels = 8;

    nn::UNetConfig unet() const { return {in_channels, classes, depth, base_channels}; }

    // Input side length must be divisible by 2^depth.
    void check_input(int height, int width) const {
        const int div = 1 << depth;
        if (height % div != 0 || width % div != 0)
            throw ConfigError("input " + shape_str(height, width) + " is not divisible by 2^depth = " +
                              std::to_string(div));
    }

    void validate() const {
        if (in_channels != 1) throw ConfigError("only single-channel inputs are supported");
        if (classes != 2) throw ConfigError("only binary segmentation (2 classes) is supported");
        if (depth < 1 || depth > 6) throw ConfigError("depth must lie in [1, 6]");
        if (base_channels < 8 || base_channels % 8 != 0) throw ConfigError("base_channels must be a positive multiple of 8");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"in_channels", c.in_channels}, {"classes", c.classes}, {"depth", c.depth}, {"base_channels", c.base_channels}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.in_channels = j.value("in_channels", 1);
    c.classes = j.value("classes", 2);
    c.depth = j.value("depth", 3);
    c.base_channels = j.value("base_channels", 8);
}

// Stacks single-channel images into a (1 x pixels) batch matrix.
inline nn::Matrix to_input(std::span<const Image> images, nn::Geometry& geo) {
    if (images.empty()) throw ShapeError("empty batch");
    const int h = images[0].height(), w = images[0].width();
    geo = {static_cast<int>(images.size()), h, w};
    nn::Matrix x(1, geo.pixels());
    float* dst = x.data();
    for (const Image& img : images) {
        if (!img.same_shape(h, w)) throw ShapeError("batch images differ in shape");
        std::memcpy(dst, img.data(), sizeof(float) * img.size());
        dst += img.size();
    }
    return x;
}

inline std::vector<SoftLabel> to_soft_labels(const nn::Matrix& probs, const nn::Geometry& geo) {
    std::vector<SoftLabel> out;
    out.reserve(static_cast<std::size_t>(geo.batch));
    const auto classes = static_cast<int>(probs.rows());
    const std::size_t per = static_cast<std::size_t>(geo.height) * geo.width;
    for (int n = 0; n < geo.batch; ++n) {
        SoftLabel s(geo.height, geo.width, classes);
        const float* src = probs.data() + static_cast<std::size_t>(n) * per * classes;
        auto dst = s.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
        out.push_back(std::move(s));
    }
    return out;
}

// One segmentation network with its own optimizer state.
class Network {
public:
    Network() = default;
    Network(const ModelConfig& cfg, std::uint64_t init_seed, float momentum = 0.9f, float weight_decay = 0.001f)
        : cfg_(cfg), seed_(init_seed), unet_((cfg.validate(), cfg.unet())), sgd_(momentum, weight_decay) {
        Rng rng(init_seed);
        unet_.init(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t init_seed() const { return seed_; }
    nn::UNet& unet() { return unet_; }
    const nn::UNet& unet() const { return unet_; }
    nn::Sgd& optimizer() { return sgd_; }
    const nn::Sgd& optimizer() const { return sgd_; }

    // Per-pixel class probabilities (classes x pixels); keep = true caches for backward().
    nn::Matrix forward(std::span<const Image> images, nn::Geometry& geo, bool keep) {
        nn::Matrix x = to_input(images, geo);
        cfg_.check_input(geo.height, geo.width);
        return nn::softmax(unet_.forward(x, geo, keep));
    }

    std::vector<SoftLabel> predict_proba(std::span<const Image> images) {
        nn::Geometry geo;
        nn::Matrix p = forward(images, geo, false);
        return to_soft_labels(p, geo);
    }

    void backward(const nn::Matrix& dlogits) { unet_.backward(dlogits); }

    void step(float lr) { sgd_.step(unet_.parameters(), lr); }

private:
    ModelConfig cfg_;
    std::uint64_t seed_ = 0;
    nn::UNet unet_;
    nn::Sgd sgd_;
};

inline Network build_unet(const ModelConfig& cfg, std::uint64_t init_seed, float momentum = 0.9f,
                          float weight_decay = 0.001f) {
    return Network(cfg, init_seed, momentum, weight_decay);
}

// Free-function form of Network::predict_proba.
inline std::vector<SoftLabel> predict_proba(Network& net, std::span<const Image> images) {
    return net.predict_proba(images);
}

enum class Member { A = 0, B = 1, C = 2 };

inline constexpr std::array<Member, 3> kMembers{Member::A, Member::B, Member::C};

inline const char* to_string(Member m) {
    switch (m) {
        case Member::A: return "A";
        case Member::B: return "B";
        default: return "C";
    }
}

// The two committee members other than `target`, in cyclic order (A -> B,C; B -> C,A; C -> A,B).
inline std::array<Member, 2> peers_of(Member target) {
    const int t = static_cast<int>(target);
    return {static_cast<Member>((t + 1) % 3), static_cast<Member>((t + 2) % 3)};
}

inline std::uint64_t member_seed(std::uint64_t global_seed, Member m) {
    return derive_seed(global_seed, hash_string("network"), static_cast<std::uint64_t>(m));
}

// Three structurally identical networks initialised from distinct seeds.
struct TriNet {
    std::array<Network, 3> nets;

    TriNet() = default;
    TriNet(const ModelConfig& cfg, std::uint64_t global_seed, float momentum = 0.9f, float weight_decay = 0.001f)
        : nets{Network(cfg, member_seed(global_seed, Member::A), momentum, weight_decay),
               Network(cfg, member_seed(global_seed, Member::B), momentum, weight_decay),
               Network(cfg, member_seed(global_seed, Member::C), momentum, weight_decay)} {}

    Network& operator[](Member m) { return nets[static_cast<std::size_t>(m)]; }
    const Network& operator[](Member m) const { return nets[static_cast<std::size_t>(m)]; }
};

// Per-pixel arithmetic mean of probability maps.
inline SoftLabel mean_soft_labels(std::span<const SoftLabel* const> maps) {
    if (maps.empty()) throw ShapeError("mean of zero soft labels");
    SoftLabel out(maps[0]->height(), maps[0]->width(), maps[0]->classes());
    for (const SoftLabel* m : maps) {
        if (!m->same_shape(out)) throw ShapeError("soft label shape mismatch");
        auto dst = out.values();
        auto src = m->values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (double& v : out.values()) v *= inv;
    return out;
}

// Averages per-sample maps across members: members[m][i] is member m's map for sample i.
inline std::vector<SoftLabel> ensemble_average(const std::vector<std::vector<SoftLabel>>& members) {
    if (members.empty()) throw ShapeError("ensemble of zero members");
    std::vector<SoftLabel> out;
    for (std::size_t i = 0; i < members[0].size(); ++i) {
        std::vector<const SoftLabel*> maps;
        for (const auto& m : members) maps.push_back(&m.at(i));
        out.push_back(mean_soft_labels(maps));
    }
    return out;
}

// Test-time prediction: per-pixel mean of the first `members` networks (3 = full committee).
inline std::vector<SoftLabel> ensemble_predict(TriNet& trinet, std::span<const Image> images, int members = 3) {
    if (members < 1 || members > 3) throw ConfigError("ensemble size must lie in [1, 3]");
    std::vector<std::vector<SoftLabel>> outs;
    for (int m = 0; m < members; ++m) outs.push_back(trinet.nets[static_cast<std::size_t>(m)].predict_proba(images));
    return ensemble_average(outs);
}

// ---- checkpoints -----------------------------------------------------------

namespace detail {

constexpr std::uint32_t kCheckpointMagic = 0x57524c43;  // "CLRW"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated checkpoint");
    return v;
}

inline void write_matrix(std::ostream& out, const nn::Matrix& m) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * m.size()));
}

inline void read_matrix(std::istream& in, nn::Matrix& m) {
    const auto rows = read_pod<std::uint32_t>(in);
    const auto cols = read_pod<std::uint32_t>(in);
    if (rows != m.rows() || cols != m.cols()) throw DataError("checkpoint tensor shape does not match the model");
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (!in) throw DataError("truncated checkpoint");
}

}  // namespace detail

// Weight blob: magic, version, parameter count, then per parameter its name,
// shape and float32 values, followed by the momentum buffers (count 0 if unused).
inline void save_weights(const std::filesystem::path& path, const Network& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    const auto params = net.unet().parameters();
    detail::write_pod(out, detail::kCheckpointMagic);
    detail::write_pod(out, detail::kCheckpointVersion);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_matrix(out, p->value);
    }
    const auto& vel = net.optimizer().velocity();
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(vel.size()));
    for (const auto& v : vel) detail::write_matrix(out, v);
}

inline void load_weights(const std::filesystem::path& path, Network& net) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint '" + path.string() + "'");
    if (detail::read_pod<std::uint32_t>(in) != detail::kCheckpointMagic) throw DataError("not a weight checkpoint");
    if (detail::read_pod<std::uint32_t>(in) != detail::kCheckpointVersion) throw DataError("unsupported checkpoint version");
    auto params = net.unet().parameters();
    if (detail::read_pod<std::uint32_t>(in) != params.size()) throw DataError("checkpoint parameter count mismatch");
    for (auto* p : params) {
        const auto len = detail::read_pod<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (name != p->name) throw DataError("checkpoint parameter '" + name + "' does not match '" + p->name + "'");
        detail::read_matrix(in, p->value);
    }
    const auto nvel = detail::read_pod<std::uint32_t>(in);
    auto& vel = net.optimizer().velocity();
    vel.clear();
    if (nvel != 0) {
        if (nvel != params.size()) throw DataError("checkpoint optimizer state mismatch");
        for (auto* p : params) {
            vel.push_back(nn::Matrix::Zero(p->value.rows(), p->value.cols()));
            detail::read_matrix(in, vel.back());
        }
    }
}

}  // namespace crl
