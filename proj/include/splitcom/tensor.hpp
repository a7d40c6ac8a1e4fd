#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitcom {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error("protocol error: " + msg) {}
};
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

/// Dense row-major fp32 array. The universal payload for activations,
/// gradients and weights.
struct Tensor {
    std::vector<int> dims;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        data.assign(static_cast<std::size_t>(count(dims)), 0.0f);
    }

    Tensor(std::vector<int> d, std::vector<float> values) : dims(std::move(d)), data(std::move(values)) {
        if (static_cast<std::int64_t>(data.size()) != count(dims)) {
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match dims product " +
                             std::to_string(count(dims)));
        }
    }

    static std::int64_t count(const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int d : dims) {
            if (d <= 0) throw ShapeError("non-positive dimension " + std::to_string(d));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<int> dims, float v) {
        Tensor t(std::move(dims));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    int dim(std::size_t i) const { return dims.at(i); }

    bool same_shape(const Tensor& other) const { return dims == other.dims; }

    float& at2(int r, int c) { return data[static_cast<std::size_t>(r) * dims[1] + c]; }
    float at2(int r, int c) const { return data[static_cast<std::size_t>(r) * dims[1] + c]; }

    bool operator==(const Tensor& other) const { return dims == other.dims && data == other.data; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }
};

inline void require_shape(const Tensor& t, const std::vector<int>& dims, const char* what) {
    if (t.dims != dims) {
        throw ShapeError(std::string(what) + ": got " + t.shape_str());
    }
}

}  // namespace splitcom
