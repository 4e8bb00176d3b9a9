#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "obstransfer/common.hpp"

namespace obstransfer::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Dense row-major array of doubles. `grad` is only populated for trainable
// parameters after a backward pass.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::optional<std::vector<double>> grad;

    Tensor() = default;

    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values))
    {
        if (shape_size(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    // Leading (batch) dimension and the flattened size of one batch row.
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t row_size() const { return shape.empty() ? 1 : data.size() / std::max<std::size_t>(shape[0], 1); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // Inf and NaN are exactly the values with an all-ones exponent.
    bool all_finite() const
    {
        constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
        std::uint64_t bad = 0;
        for (double v : data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            bad |= static_cast<std::uint64_t>((bits & exp_mask) == exp_mask);
        }
        return bad == 0;
    }

    void zero_grad() { grad.reset(); }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
};

inline bool same_values(const Tensor& a, const Tensor& b)
{
    return a.shape == b.shape && a.data == b.data;
}

}  // namespace obstransfer::nn
