#pragma once

// Dataset ingestion (paired image/mask PNG directories), the synthetic
// two-blob surrogate, preprocessing and augmentation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/image_io.hpp"
#include "crl/morphology.hpp"
#include "crl/rng.hpp"
#include "crl/types.hpp"

namespace crl {

struct Provenance {
    std::string source = "synthetic";
    bool corrupted = false;
    NoiseOp op = NoiseOp::Erode;
    int iterations = 0;
};

struct Sample {
    std::string id;
    Image image;             // normalised intensities
    BinaryMask clean_mask;   // evaluation only
    BinaryMask train_mask;   // possibly corrupted
    Provenance provenance;

    int height() const { return image.height(); }
    int width() const { return image.width(); }

    void validate() const {
        require_same_shape(image, clean_mask, "sample clean mask");
        require_same_shape(image, train_mask, "sample train mask");
    }
};

struct DatasetManifest {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::string source = "synthetic";  // shenzhen | synthetic
    int height = 256;
    int width = 256;
    std::uint64_t split_seed = 0;

    void validate() const {
        std::set<std::string> train(train_ids.begin(), train_ids.end());
        if (train.size() != train_ids.size()) throw ConfigError("manifest: duplicate train ids");
        for (const auto& id : test_ids)
            if (train.count(id)) throw ConfigError("manifest: id '" + id + "' is in both train and test splits");
        if (height < 1 || width < 1) throw ConfigError("manifest: invalid image size");
    }
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = {{"source", m.source},       {"height", m.height},         {"width", m.width},
         {"split_seed", m.split_seed}, {"train_ids", m.train_ids}, {"test_ids", m.test_ids}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m.source = j.value("source", std::string("synthetic"));
    m.height = j.value("height", 256);
    m.width = j.value("width", 256);
    m.split_seed = j.value("split_seed", std::uint64_t{0});
    m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
    out << nlohmann::json(m).dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest '" + path.string() + "'");
    try {
        DatasetManifest m = nlohmann::json::parse(in).get<DatasetManifest>();
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest '" + path.string() + "': " + e.what());
    }
}

// Deterministic split of sorted ids: shuffle with split_seed, first train_count go to train.
inline DatasetManifest make_manifest(std::vector<std::string> ids, std::size_t train_count, std::size_t test_count,
                                     std::uint64_t split_seed, std::string source, int height, int width) {
    if (train_count + test_count > ids.size())
        throw ConfigError("split " + std::to_string(train_count) + "/" + std::to_string(test_count) + " exceeds " +
                          std::to_string(ids.size()) + " available samples");
    std::sort(ids.begin(), ids.end());
    Rng rng(split_seed);
    rng.shuffle(ids.begin(), ids.end());
    DatasetManifest m;
    m.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train_count));
    m.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(train_count),
                      ids.begin() + static_cast<std::ptrdiff_t>(train_count + test_count));
    m.source = std::move(source);
    m.height = height;
    m.width = width;
    m.split_seed = split_seed;
    return m;
}

// Ids with both images/<id>.png and masks/<id>.png, sorted. Throws on an image without a mask.
inline std::vector<std::string> scan_dataset_ids(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const fs::path images = root / "images", masks = root / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw DataError("dataset root '" + root.string() + "' must contain images/ and masks/");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(images)) {
        if (e.path().extension() != ".png") continue;
        const std::string id = e.path().stem().string();
        if (!fs::exists(masks / (id + ".png"))) throw DataError("missing mask for image '" + id + "'");
        ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

// Zero mean, unit (population) variance. Constant images are rejected.
inline Image normalize(const Image& img) {
    double mean = 0.0;
    for (float v : img.values()) mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (float v : img.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.size());
    if (var <= 1e-12) throw DataError("cannot normalise an image with zero variance");
    const double inv = 1.0 / std::sqrt(var);
    Image out(img.height(), img.width());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>((img[i] - mean) * inv);
    return out;
}

// Align-corners-false bilinear resampling.
inline Image resize_bilinear(const Image& img, int height, int width) {
    if (img.same_shape(height, width)) return img;
    Image out(height, width);
    const double sy = static_cast<double>(img.height()) / height;
    const double sx = static_cast<double>(img.width()) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width() - 1);
            const double wx = fx - x0;
            const double top = img(y0, x0) * (1 - wx) + img(y0, x1) * wx;
            const double bot = img(y1, x0) * (1 - wx) + img(y1, x1) * wx;
            out(y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return out;
}

inline BinaryMask resize_nearest(const BinaryMask& m, int height, int width) {
    if (m.same_shape(height, width)) return m;
    BinaryMask out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(static_cast<int>((y + 0.5) * m.height() / height), m.height() - 1);
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(static_cast<int>((x + 0.5) * m.width() / width), m.width() - 1);
            out(y, x) = m(sy, sx);
        }
    }
    return out;
}

inline Sample load_sample(const std::filesystem::path& root, const std::string& id, int height, int width,
                          const std::string& source) {
    const auto img_path = root / "images" / (id + ".png");
    const auto mask_path = root / "masks" / (id + ".png");
    if (!std::filesystem::exists(mask_path)) throw DataError("missing mask for image '" + id + "'");
    const Gray8 raw = read_png_gray(img_path);
    const BinaryMask mask = mask_from_gray(read_png_gray(mask_path));
    Image img(raw.height(), raw.width());
    for (std::size_t i = 0; i < raw.size(); ++i) img[i] = raw[i] / 255.0f;
    Sample s;
    s.id = id;
    try {
        s.image = normalize(resize_bilinear(img, height, width));
    } catch (const DataError& e) {
        throw DataError("sample '" + id + "': " + e.what());
    }
    s.clean_mask = resize_nearest(mask, height, width);
    s.train_mask = s.clean_mask;
    s.provenance.source = source;
    return s;
}

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Loads the manifest's split from root/images and root/masks.
inline Dataset load_dataset(const std::filesystem::path& root, const DatasetManifest& manifest) {
    manifest.validate();
    Dataset d;
    for (const auto& id : manifest.train_ids)
        d.train.push_back(load_sample(root, id, manifest.height, manifest.width, manifest.source));
    for (const auto& id : manifest.test_ids)
        d.test.push_back(load_sample(root, id, manifest.height, manifest.width, manifest.source));
    return d;
}

// Shenzhen chest X-ray set: 566 images, 396 train / 170 test.
inline DatasetManifest shenzhen_manifest(const std::filesystem::path& root, std::uint64_t split_seed, int size = 256) {
    return make_manifest(scan_dataset_ids(root), 396, 170, split_seed, "shenzhen", size, size);
}

inline Dataset load_shenzhen(const std::filesystem::path& root, const DatasetManifest& manifest) {
    return load_dataset(root, manifest);
}

struct SynthImage {
    Image raw;  // intensities in [0, 1], before normalisation
    BinaryMask mask;
};

// One synthetic radiograph-like image: two dark lobes with wobbly outlines on a
// bright, shaded, noisy background with a brighter mediastinum between them.
inline SynthImage synth_image(int size, Rng& rng) {
    struct Lobe {
        double cx, cy, ax, ay, phase1, phase2, amp1, amp2;
    };
    const double s = size;
    Lobe lobes[2];
    for (int i = 0; i < 2; ++i) {
        Lobe& l = lobes[i];
        l.cx = s * (i == 0 ? rng.uniform(0.24, 0.29) : rng.uniform(0.71, 0.76));
        l.cy = s * rng.uniform(0.44, 0.56);
        l.ax = s * rng.uniform(0.14, 0.19);
        l.ay = s * rng.uniform(0.24, 0.32);
        l.phase1 = rng.uniform(0.0, 2 * M_PI);
        l.phase2 = rng.uniform(0.0, 2 * M_PI);
        l.amp1 = rng.uniform(0.0, 0.12);
        l.amp2 = rng.uniform(0.0, 0.08);
    }
    // Normalised radial coordinate: < 1 inside the lobe.
    auto radial = [&](const Lobe& l, double x, double y) {
        const double dx = (x - l.cx) / l.ax, dy = (y - l.cy) / l.ay;
        const double t = std::atan2(dy, dx);
        const double wobble = 1.0 + l.amp1 * std::sin(3 * t + l.phase1) + l.amp2 * std::sin(5 * t + l.phase2);
        return std::sqrt(dx * dx + dy * dy) / wobble;
    };
    const double bg = rng.uniform(0.55, 0.7);
    const double lung = bg - rng.uniform(0.12, 0.25);
    const double grad = rng.uniform(-0.1, 0.1);
    const double noise = rng.uniform(0.08, 0.15);
    const double edge = rng.uniform(0.04, 0.10);  // boundary softness, in radial units
    // Curved rib-like stripes crossing the whole field.
    const double rib_amp = rng.uniform(0.03, 0.08);
    const double rib_freq = rng.uniform(5.0, 8.0);
    const double rib_phase = rng.uniform(0.0, 2 * M_PI);
    const double rib_bend = rng.uniform(0.3, 0.8);
    // Dark distractor blobs with lung-like contrast that are not labelled.
    struct Blob {
        double cx, cy, r, depth;
    };
    std::vector<Blob> blobs(static_cast<std::size_t>(rng.uniform_int(0, 3)));
    for (Blob& b : blobs) {
        b.cx = s * rng.uniform(0.1, 0.9);
        b.cy = s * (rng.bernoulli(0.5) ? rng.uniform(0.02, 0.12) : rng.uniform(0.88, 0.98));
        b.r = s * rng.uniform(0.03, 0.07);
        b.depth = (bg - lung) * rng.uniform(0.6, 1.1);
    }
    SynthImage out{Image(size, size), BinaryMask(size, size)};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double v = bg + grad * (py / s - 0.5);
            const double mid = std::abs(px / s - 0.5);
            v += 0.15 * std::exp(-mid * mid / 0.004);
            v += rib_amp * std::sin(2 * M_PI * rib_freq * (py / s + rib_bend * mid * mid) + rib_phase);
            for (const Blob& b : blobs) {
                const double d2 = ((px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy)) / (b.r * b.r);
                v -= b.depth * std::exp(-d2);
            }
            bool inside = false;
            for (const Lobe& l : lobes) {
                const double r = radial(l, px, py);
                inside = inside || r < 1.0;
                v += (lung - bg) / (1.0 + std::exp((r - 1.0) / edge));
            }
            v += rng.normal(0.0, noise);
            out.raw(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            out.mask(y, x) = inside ? 1 : 0;
        }
    return out;
}

inline std::string synth_id(std::size_t i) {
    std::string n = std::to_string(i);
    return "synth_" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n;
}

// count samples of size x size; sample i draws from its own substream of seed.
inline std::vector<Sample> synth_shapes(int count, int size, std::uint64_t seed) {
    if (count < 1) throw ConfigError("synth_shapes: count must be >= 1");
    if (size < 32) throw ConfigError("synth_shapes: size must be >= 32");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        SynthImage si = synth_image(size, rng);
        Sample s;
        s.id = synth_id(static_cast<std::size_t>(i));
        s.image = normalize(si.raw);
        s.clean_mask = std::move(si.mask);
        s.train_mask = s.clean_mask;
        s.provenance.source = "synthetic";
        out.push_back(std::move(s));
    }
    return out;
}

// Applies corrupt_dataset to the train masks and records provenance.
inline CorruptionLog corrupt_samples(std::vector<Sample>& samples, const NoiseSpec& spec) {
    std::vector<BinaryMask> masks;
    std::vector<std::string> ids;
    for (const auto& s : samples) {
        masks.push_back(s.clean_mask);
        ids.push_back(s.id);
    }
    CorruptionResult r = corrupt_dataset(masks, spec, ids);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i].train_mask = std::move(r.masks[i]);
        samples[i].provenance.corrupted = false;
    }
    for (const auto& e : r.log) {
        auto& p = samples[e.index].provenance;
        p.corrupted = true;
        p.op = e.op;
        p.iterations = e.iterations;
    }
    return r.log;
}

struct AugmentConfig {
    double max_rotation_deg = 10.0;
    double flip_probability = 0.5;

    bool operator==(const AugmentConfig&) const = default;
};

// One random rotation about the centre plus an optional horizontal flip, shared
// by the image (bilinear) and both masks (nearest). Out-of-frame pixels are 0.
inline Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& cfg = {}) {
    const double angle = cfg.max_rotation_deg > 0 ? rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) : 0.0;
    const bool flip = cfg.flip_probability > 0 && rng.bernoulli(cfg.flip_probability);
    Sample out = sample;
    const int h = sample.height(), w = sample.width();
    if (angle != 0.0) {
        const double th = angle * M_PI / 180.0, c = std::cos(th), s = std::sin(th);
        const double cy = h / 2.0, cx = w / 2.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // Inverse map from output pixel centre to source coordinates.
                const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                const double sx = c * dx + s * dy + cx - 0.5;
                const double sy = -s * dx + c * dy + cy - 0.5;
                const int nx = static_cast<int>(std::lround(sx)), ny = static_cast<int>(std::lround(sy));
                const bool in = nx >= 0 && nx < w && ny >= 0 && ny < h;
                out.clean_mask(y, x) = in ? sample.clean_mask(ny, nx) : 0;
                out.train_mask(y, x) = in ? sample.train_mask(ny, nx) : 0;
                const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                auto px = [&](int yy, int xx) -> double {
                    return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : sample.image(yy, xx);
                };
                out.image(y, x) = static_cast<float>((px(y0, x0) * (1 - fx) + px(y0, x0 + 1) * fx) * (1 - fy) +
                                                     (px(y0 + 1, x0) * (1 - fx) + px(y0 + 1, x0 + 1) * fx) * fy);
            }
    }
    if (flip) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x) {
                std::swap(out.image(y, x), out.image(y, w - 1 - x));
                std::swap(out.clean_mask(y, x), out.clean_mask(y, w - 1 - x));
                std::swap(out.train_mask(y, x), out.train_mask(y, w - 1 - x));
            }
    }
    return out;
}

// Writes images/<id>.png (8-bit intensities) and masks/<id>.png plus manifest.json.
inline void write_synthetic_dataset(const std::filesystem::path& root, int count, int size, std::uint64_t seed,
                                    std::size_t train_count, std::size_t test_count) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const SynthImage si = synth_image(size, rng);
        Gray8 g(size, size);
        for (std::size_t p = 0; p < g.size(); ++p)
            g[p] = static_cast<std::uint8_t>(std::lround(std::clamp(si.raw[p], 0.0f, 1.0f) * 255.0f));
        const std::string id = synth_id(static_cast<std::size_t>(i));
        write_png_gray(root / "images" / (id + ".png"), g);
        write_png_gray(root / "masks" / (id + ".png"), mask_to_gray(si.mask));
        ids.push_back(id);
    }
    save_manifest(root / "manifest.json", make_manifest(ids, train_count, test_count, seed, "synthetic", size, size));
}

}  // namespace crl
