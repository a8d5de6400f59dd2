#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace crl {

// Bad configuration or arguments (CLI exit code 2).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Mismatched grid/tensor shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Unreadable or inconsistent input data (CLI exit code 3).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

// Row-major H x W grid.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
        if (height < 1 || width < 1) throw ShapeError("grid dimensions must be >= 1, got " + shape_str(height, width));
        values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
    }
    Grid(int height, int width, std::vector<T> values) : height_(height), width_(width), values_(std::move(values)) {
        if (height < 1 || width < 1) throw ShapeError("grid dimensions must be >= 1, got " + shape_str(height, width));
        if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
            throw ShapeError("grid value count does not match " + shape_str(height, width));
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    T& operator()(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& operator()(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    bool same_shape(int h, int w) const { return height_ == h && width_ == w; }
    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    bool operator==(const Grid&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> values_;
};

using Image = Grid<float>;

// H x W grid of {0,1}.
class BinaryMask : public Grid<std::uint8_t> {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0) : Grid(height, width, fill ? 1 : 0) {}
    BinaryMask(int height, int width, std::vector<std::uint8_t> values) : Grid(height, width, std::move(values)) {
        for (auto v : this->values())
            if (v > 1) throw ShapeError("binary mask values must be 0 or 1");
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : values()) n += v;
        return n;
    }

    bool operator==(const BinaryMask&) const = default;
};

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.height(), a.width()) + " vs " +
                         shape_str(b.height(), b.width()));
}

// Per-pixel class distribution, stored pixel-major: probs[(y*W + x)*L + c].
class SoftLabel {
public:
    SoftLabel() = default;
    SoftLabel(int height, int width, int classes, double fill = 0.0)
        : height_(height), width_(width), classes_(classes) {
        if (height < 1 || width < 1 || classes < 1) throw ShapeError("soft label dimensions must be >= 1");
        probs_.assign(static_cast<std::size_t>(height) * width * classes, fill);
    }

    // Uniform distribution over classes.
    static SoftLabel uniform(int height, int width, int classes) {
        return SoftLabel(height, width, classes, 1.0 / classes);
    }

    // One-hot encoding of a binary mask; `eps` puts eps mass on the other class.
    static SoftLabel one_hot(const BinaryMask& mask, double eps = 0.0) {
        SoftLabel s(mask.height(), mask.width(), 2);
        for (std::size_t p = 0; p < mask.size(); ++p) {
            s.probs_[2 * p + mask[p]] = 1.0 - eps;
            s.probs_[2 * p + 1 - mask[p]] = eps;
        }
        return s;
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int classes() const { return classes_; }
    std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }

    double& at(std::size_t pixel, int c) { return probs_[pixel * classes_ + c]; }
    double at(std::size_t pixel, int c) const { return probs_[pixel * classes_ + c]; }
    std::span<double> pixel(std::size_t p) { return {probs_.data() + p * classes_, static_cast<std::size_t>(classes_)}; }
    std::span<const double> pixel(std::size_t p) const {
        return {probs_.data() + p * classes_, static_cast<std::size_t>(classes_)};
    }
    std::span<double> values() { return probs_; }
    std::span<const double> values() const { return probs_; }

    bool same_shape(const SoftLabel& o) const {
        return height_ == o.height_ && width_ == o.width_ && classes_ == o.classes_;
    }

    // Every pixel non-negative and summing to 1 within tol.
    bool is_simplex(double tol = 1e-6) const {
        for (std::size_t p = 0; p < pixels(); ++p) {
            double s = 0.0;
            for (double v : pixel(p)) {
                if (!(v >= 0.0) || !std::isfinite(v)) return false;
                s += v;
            }
            if (std::abs(s - 1.0) > tol) return false;
        }
        return true;
    }

    // Per-pixel argmax as a binary mask (class 1 = foreground); ties go to class 0.
    BinaryMask argmax() const {
        if (classes_ != 2) throw ShapeError("argmax to BinaryMask requires 2 classes");
        BinaryMask m(height_, width_);
        for (std::size_t p = 0; p < pixels(); ++p) m[p] = probs_[2 * p + 1] > probs_[2 * p] ? 1 : 0;
        return m;
    }

    bool operator==(const SoftLabel&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    int classes_ = 0;
    std::vector<double> probs_;
};

}  // namespace crl
