#pragma once

// Minimal CPU building blocks for a 2D U-Net. Activations are channels-last,
// held as (channels x pixels) column-major Eigen matrices. Layers cache what
// their backward pass needs.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "crl/conv_kernels.hpp"
#include "crl/rng.hpp"
#include "crl/types.hpp"

namespace crl::nn {

using Matrix = Eigen::MatrixXf;
using Index = Eigen::Index;

// Batch geometry: pixel index p = (n * height + y) * width + x.
struct Geometry {
    int batch = 0;
    int height = 0;
    int width = 0;

    Index pixels() const { return static_cast<Index>(batch) * height * width; }
    Geometry half() const { return {batch, height / 2, width / 2}; }
    Geometry twice() const { return {batch, height * 2, width * 2}; }
    bool operator==(const Geometry&) const = default;
};

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
};

namespace detail {

inline void he_normal(Matrix& w, int fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / fan_in);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.normal(0.0, std));
}

}  // namespace detail

// 3x3 same-padding convolution followed by ReLU.
class Conv3x3Relu {
public:
    Conv3x3Relu() = default;
    Conv3x3Relu(std::string name, int in, int out) : in_(in), out_(out) {
        weight_ = {name + ".weight", Matrix::Zero(out, 9 * in), Matrix::Zero(out, 9 * in)};
        bias_ = {name + ".bias", Matrix::Zero(out, 1), Matrix::Zero(out, 1)};
    }

    void init(Rng& rng) {
        detail::he_normal(weight_.value, 9 * in_, rng);
        bias_.value.setZero();
    }

    Matrix forward(const Matrix& x, const Geometry& g, bool keep) {
        std::vector<float> padded = kernels::pad1(x.data(), g.batch, g.height, g.width, in_);
        Matrix y(out_, g.pixels());
        kernels::conv3x3_forward(padded.data(), weight_.value.data(), bias_.value.data(), y.data(), g.batch, g.height,
                                 g.width, in_, out_);
        y = y.cwiseMax(0.0f);
        if (keep) {
            padded_ = std::move(padded);
            out_cache_ = y;
            geo_ = g;
        }
        return y;
    }

    // Returns dL/dx unless need_input_grad is false (first layer).
    Matrix backward(const Matrix& dy, bool need_input_grad = true) {
        const Geometry& g = geo_;
        Matrix dz = (out_cache_.array() > 0.0f).select(dy, 0.0f);
        kernels::conv3x3_weight_grad(padded_.data(), dz.data(), weight_.grad.data(), g.batch, g.height, g.width, in_,
                                     out_);
        bias_.grad = dz.rowwise().sum();
        Matrix dx;
        if (need_input_grad) {
            const std::vector<float> flipped = kernels::flip_weights(weight_.value.data(), in_, out_);
            const std::vector<float> dz_padded = kernels::pad1(dz.data(), g.batch, g.height, g.width, out_);
            dx.resize(in_, g.pixels());
            kernels::conv3x3_forward(dz_padded.data(), flipped.data(), nullptr, dx.data(), g.batch, g.height, g.width,
                                     out_, in_);
        }
        release();
        return dx;
    }

    void release() {
        padded_.clear();
        padded_.shrink_to_fit();
        out_cache_.resize(0, 0);
    }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    int in_ = 0;
    int out_ = 0;
    Parameter weight_, bias_;
    std::vector<float> padded_;
    Matrix out_cache_;
    Geometry geo_;
};

// 2x2 max pooling, stride 2.
class MaxPool2 {
public:
    Matrix forward(const Matrix& x, const Geometry& g, bool keep) {
        const Geometry h = g.half();
        const Index c = x.rows();
        Matrix y(c, h.pixels());
        std::vector<Index> arg(static_cast<std::size_t>(y.size()));
        for (int n = 0; n < h.batch; ++n)
            for (int oy = 0; oy < h.height; ++oy)
                for (int ox = 0; ox < h.width; ++ox) {
                    const Index op = (static_cast<Index>(n) * h.height + oy) * h.width + ox;
                    const Index base = (static_cast<Index>(n) * g.height + 2 * oy) * g.width + 2 * ox;
                    const Index cand[4] = {base, base + 1, base + g.width, base + g.width + 1};
                    for (Index k = 0; k < c; ++k) {
                        Index best = cand[0];
                        float v = x(k, best);
                        for (int j = 1; j < 4; ++j)
                            if (x(k, cand[j]) > v) {
                                v = x(k, cand[j]);
                                best = cand[j];
                            }
                        y(k, op) = v;
                        arg[static_cast<std::size_t>(op * c + k)] = best;
                    }
                }
        if (keep) {
            argmax_ = std::move(arg);
            in_pixels_ = g.pixels();
        }
        return y;
    }

    Matrix backward(const Matrix& dy) {
        const Index c = dy.rows();
        Matrix dx = Matrix::Zero(c, in_pixels_);
        for (Index op = 0; op < dy.cols(); ++op)
            for (Index k = 0; k < c; ++k) dx(k, argmax_[static_cast<std::size_t>(op * c + k)]) += dy(k, op);
        argmax_.clear();
        return dx;
    }

private:
    std::vector<Index> argmax_;
    Index in_pixels_ = 0;
};

// 2x2 stride-2 transposed convolution (up-convolution).
class UpConv2x2 {
public:
    UpConv2x2() = default;
    UpConv2x2(std::string name, int in, int out) : in_(in), out_(out) {
        weight_ = {name + ".weight", Matrix::Zero(4 * out, in), Matrix::Zero(4 * out, in)};
        bias_ = {name + ".bias", Matrix::Zero(out, 1), Matrix::Zero(out, 1)};
    }

    void init(Rng& rng) {
        detail::he_normal(weight_.value, in_, rng);
        bias_.value.setZero();
    }

    Matrix forward(const Matrix& x, const Geometry& g, bool keep) {
        Matrix z(4 * out_, g.pixels());
        z.noalias() = weight_.value * x;
        const Geometry big = g.twice();
        Matrix y(out_, big.pixels());
        for (int n = 0; n < g.batch; ++n)
            for (int sy = 0; sy < g.height; ++sy)
                for (int sx = 0; sx < g.width; ++sx) {
                    const Index p = (static_cast<Index>(n) * g.height + sy) * g.width + sx;
                    for (int k = 0; k < 4; ++k) {
                        const Index q = (static_cast<Index>(n) * big.height + 2 * sy + k / 2) * big.width + 2 * sx + k % 2;
                        y.col(q) = z.block(k * out_, p, out_, 1) + bias_.value;
                    }
                }
        if (keep) {
            in_cache_ = x;
            geo_ = g;
        }
        return y;
    }

    Matrix backward(const Matrix& dy) {
        const Geometry& g = geo_;
        const Geometry big = g.twice();
        Matrix gathered(4 * out_, g.pixels());
        for (int n = 0; n < g.batch; ++n)
            for (int sy = 0; sy < g.height; ++sy)
                for (int sx = 0; sx < g.width; ++sx) {
                    const Index p = (static_cast<Index>(n) * g.height + sy) * g.width + sx;
                    for (int k = 0; k < 4; ++k) {
                        const Index q = (static_cast<Index>(n) * big.height + 2 * sy + k / 2) * big.width + 2 * sx + k % 2;
                        gathered.block(k * out_, p, out_, 1) = dy.col(q);
                    }
                }
        weight_.grad.noalias() = gathered * in_cache_.transpose();
        bias_.grad = dy.rowwise().sum();
        Matrix dx(in_, g.pixels());
        dx.noalias() = weight_.value.transpose() * gathered;
        in_cache_.resize(0, 0);
        return dx;
    }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    int in_ = 0;
    int out_ = 0;
    Parameter weight_, bias_;
    Matrix in_cache_;
    Geometry geo_;
};

// 1x1 convolution producing class logits.
class Conv1x1 {
public:
    Conv1x1() = default;
    Conv1x1(std::string name, int in, int out) : in_(in), out_(out) {
        weight_ = {name + ".weight", Matrix::Zero(out, in), Matrix::Zero(out, in)};
        bias_ = {name + ".bias", Matrix::Zero(out, 1), Matrix::Zero(out, 1)};
    }

    void init(Rng& rng) {
        // Xavier-style: the head feeds a softmax, not a ReLU.
        const double std = std::sqrt(1.0 / in_);
        for (Index i = 0; i < weight_.value.size(); ++i)
            weight_.value.data()[i] = static_cast<float>(rng.normal(0.0, std));
        bias_.value.setZero();
    }

    Matrix forward(const Matrix& x, bool keep) {
        Matrix y(out_, x.cols());
        y.noalias() = weight_.value * x;
        y.colwise() += bias_.value.col(0);
        if (keep) in_cache_ = x;
        return y;
    }

    Matrix backward(const Matrix& dy) {
        weight_.grad.noalias() = dy * in_cache_.transpose();
        bias_.grad = dy.rowwise().sum();
        Matrix dx(in_, dy.cols());
        dx.noalias() = weight_.value.transpose() * dy;
        in_cache_.resize(0, 0);
        return dx;
    }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    int in_ = 0;
    int out_ = 0;
    Parameter weight_, bias_;
    Matrix in_cache_;
};

// Column-wise softmax of a (classes x pixels) logit matrix.
inline Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Index j = 0; j < logits.cols(); ++j) {
        const float m = logits.col(j).maxCoeff();
        float s = 0.0f;
        for (Index i = 0; i < logits.rows(); ++i) {
            p(i, j) = std::exp(logits(i, j) - m);
            s += p(i, j);
        }
        p.col(j) /= s;
    }
    return p;
}

struct UNetConfig {
    int in_channels = 1;
    int classes = 2;
    int depth = 3;
    int base_channels = 8;

    bool operator==(const UNetConfig&) const = default;
};

// Encoder-decoder with skip connections: per level two 3x3 conv+ReLU, 2x2 max
// pooling down, 2x2 up-convolution up, concatenation with the encoder feature
// map, and a final 1x1 convolution to class logits.
class UNet {
public:
    UNet() = default;
    explicit UNet(const UNetConfig& cfg) : cfg_(cfg) {
        if (cfg.depth < 1 || cfg.base_channels < 1 || cfg.in_channels < 1 || cfg.classes < 2)
            throw ConfigError("invalid U-Net configuration");
        if (cfg.base_channels % 8 != 0) throw ConfigError("base_channels must be a multiple of 8");
        int prev = cfg.in_channels;
        for (int i = 0; i < cfg.depth; ++i) {
            const int ch = channels(i);
            const std::string lvl = std::to_string(i);
            enc_a_.emplace_back("enc" + lvl + ".a", prev, ch);
            enc_b_.emplace_back("enc" + lvl + ".b", ch, ch);
            pools_.emplace_back();
            prev = ch;
        }
        bott_a_ = Conv3x3Relu("bottleneck.a", prev, channels(cfg.depth));
        bott_b_ = Conv3x3Relu("bottleneck.b", channels(cfg.depth), channels(cfg.depth));
        for (int i = 0; i < cfg.depth; ++i) {
            const int ch = channels(i);
            const std::string lvl = std::to_string(i);
            up_.emplace_back("up" + lvl, channels(i + 1), ch);
            dec_a_.emplace_back("dec" + lvl + ".a", 2 * ch, ch);
            dec_b_.emplace_back("dec" + lvl + ".b", ch, ch);
        }
        head_ = Conv1x1("head", channels(0), cfg.classes);
    }

    const UNetConfig& config() const { return cfg_; }
    int channels(int level) const { return cfg_.base_channels << level; }

    // Deterministic initialisation in a fixed layer order.
    void init(Rng& rng) {
        for (int i = 0; i < cfg_.depth; ++i) {
            enc_a_[i].init(rng);
            enc_b_[i].init(rng);
        }
        bott_a_.init(rng);
        bott_b_.init(rng);
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            up_[i].init(rng);
            dec_a_[i].init(rng);
            dec_b_[i].init(rng);
        }
        head_.init(rng);
    }

    // x: (in_channels x pixels). Returns logits (classes x pixels).
    Matrix forward(const Matrix& x, const Geometry& g, bool keep) {
        const int div = 1 << cfg_.depth;
        if (g.height % div != 0 || g.width % div != 0)
            throw ConfigError("input " + shape_str(g.height, g.width) + " not divisible by 2^depth = " +
                              std::to_string(div));
        if (x.rows() != cfg_.in_channels || x.cols() != g.pixels())
            throw ShapeError("U-Net input does not match geometry");
        std::vector<Matrix> skips(static_cast<std::size_t>(cfg_.depth));
        Matrix h = x;
        Geometry geo = g;
        for (int i = 0; i < cfg_.depth; ++i) {
            h = enc_a_[i].forward(h, geo, keep);
            h = enc_b_[i].forward(h, geo, keep);
            skips[i] = h;
            h = pools_[i].forward(h, geo, keep);
            geo = geo.half();
        }
        h = bott_a_.forward(h, geo, keep);
        h = bott_b_.forward(h, geo, keep);
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            Matrix up = up_[i].forward(h, geo, keep);
            geo = geo.twice();
            Matrix cat(skips[i].rows() + up.rows(), geo.pixels());
            cat.topRows(skips[i].rows()) = skips[i];
            cat.bottomRows(up.rows()) = up;
            skips[i].resize(0, 0);
            h = dec_a_[i].forward(cat, geo, keep);
            h = dec_b_[i].forward(h, geo, keep);
        }
        return head_.forward(h, keep);
    }

    // Backward pass from dL/dlogits of the last forward(keep = true). Overwrites grads.
    void backward(const Matrix& dlogits) {
        std::vector<Matrix> dskips(static_cast<std::size_t>(cfg_.depth));
        Matrix dh = head_.backward(dlogits);
        for (int i = 0; i < cfg_.depth; ++i) {
            dh = dec_b_[i].backward(dh);
            dh = dec_a_[i].backward(dh);
            const Index c = channels(i);
            dskips[i] = dh.topRows(c);
            Matrix dup = dh.bottomRows(dh.rows() - c);
            dh = up_[i].backward(dup);
        }
        dh = bott_b_.backward(dh);
        dh = bott_a_.backward(dh);
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            dh = pools_[i].backward(dh);
            dh += dskips[i];
            dskips[i].resize(0, 0);
            dh = enc_b_[i].backward(dh);
            dh = enc_a_[i].backward(dh, i != 0);
        }
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        auto add = [&](auto& layer) {
            ps.push_back(&layer.weight());
            ps.push_back(&layer.bias());
        };
        for (int i = 0; i < cfg_.depth; ++i) {
            add(enc_a_[i]);
            add(enc_b_[i]);
        }
        add(bott_a_);
        add(bott_b_);
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            add(up_[i]);
            add(dec_a_[i]);
            add(dec_b_[i]);
        }
        add(head_);
        return ps;
    }

    std::vector<const Parameter*> parameters() const {
        auto ps = const_cast<UNet*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

private:
    UNetConfig cfg_;
    std::vector<Conv3x3Relu> enc_a_, enc_b_, dec_a_, dec_b_;
    std::vector<MaxPool2> pools_;
    std::vector<UpConv2x2> up_;
    Conv3x3Relu bott_a_, bott_b_;
    Conv1x1 head_;
};

// SGD with momentum and L2 weight decay (decay added to the gradient).
class Sgd {
public:
    Sgd() = default;
    Sgd(float momentum, float weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(const std::vector<Parameter*>& params, float lr) {
        if (velocity_.empty()) {
            for (auto* p : params) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter& p = *params[i];
            Matrix d = p.grad + weight_decay_ * p.value;
            velocity_[i] = momentum_ * velocity_[i] + d;
            p.value -= lr * velocity_[i];
        }
    }

    std::vector<Matrix>& velocity() { return velocity_; }
    const std::vector<Matrix>& velocity() const { return velocity_; }
    float momentum() const { return momentum_; }
    float weight_decay() const { return weight_decay_; }

private:
    float momentum_ = 0.9f;
    float weight_decay_ = 0.001f;
    std::vector<Matrix> velocity_;
};

}  // namespace crl::nn
