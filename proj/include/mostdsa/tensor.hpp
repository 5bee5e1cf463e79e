#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mostdsa/common.hpp"

namespace mostdsa {

// Dense (batch, channels, height, width) tensor, row-major, value semantics.
// Copies share the buffer; kernels never mutate their inputs, so shared
// buffers behave as immutable values.
struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    Shape() = default;
    Shape(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}

    std::int64_t numel() const {
        return std::int64_t(n) * c * h * w;
    }
    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

template <typename T>
class Tensor {
public:
    using Buffer = std::vector<T, CountingAllocator<T>>;

    Tensor() = default;

    explicit Tensor(Shape s) : shape_(s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ConfigError("tensor shape has negative dimension " + s.str());
        data_ = std::make_shared<Buffer>(static_cast<std::size_t>(s.numel()), T(0));
    }

    Tensor(Shape s, std::vector<T> values) : shape_(s) {
        if (static_cast<std::int64_t>(values.size()) != s.numel())
            throw ConfigError("tensor data length " + std::to_string(values.size()) +
                              " does not match shape " + s.str());
        data_ = std::make_shared<Buffer>(values.begin(), values.end());
    }

    static Tensor zeros(Shape s) { return Tensor(s); }

    static Tensor full(Shape s, T v) {
        Tensor t(s);
        for (auto& x : *t.data_) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    bool empty() const { return !data_; }

    const T* data() const { return data_->data(); }
    T* data() { return data_->data(); }

    T at(int n, int c, int h, int w) const {
        return (*data_)[idx(n, c, h, w)];
    }
    T& at(int n, int c, int h, int w) {
        return (*data_)[idx(n, c, h, w)];
    }

    std::size_t idx(int n, int c, int h, int w) const {
        return ((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    // View with a different shape over the same buffer (element count must match).
    Tensor reshaped(Shape s) const {
        if (s.numel() != shape_.numel())
            throw ConfigError("reshape " + shape_.str() + " -> " + s.str() +
                              " changes element count");
        Tensor t;
        t.shape_ = s;
        t.data_ = data_;
        return t;
    }

    Tensor clone() const {
        Tensor t(shape_);
        *t.data_ = *data_;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        const T* s = data();
        U* d = t.data();
        for (std::int64_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
        return t;
    }

    bool all_finite() const {
        const T* p = data();
        for (std::int64_t i = 0; i < numel(); ++i)
            if (!std::isfinite(static_cast<double>(p[i]))) return false;
        return true;
    }

private:
    Shape shape_;
    std::shared_ptr<Buffer> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() +
                          " vs " + b.shape().str());
}

template <typename T>
Tensor<T> random_uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor<T> t(s);
    T* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        p[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> random_normal(Shape s, Rng& rng, double mean, double std) {
    Tensor<T> t(s);
    T* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        p[i] = static_cast<T>(rng.normal(mean, std));
    return t;
}

}  // namespace mostdsa
