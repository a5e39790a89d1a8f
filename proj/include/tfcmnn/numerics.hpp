#pragma once

#include "tfcmnn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tfcmnn {

// Dense row-major array of doubles, rank 1 to 3.
class Tensor
{
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;

    // Zero-filled.
    explicit Tensor(Shape shape)
        : shape_(std::move(shape))
    {
        check_shape();
        data_.assign(element_count(shape_), 0.0);
    }

    // Checked: rejects a length mismatch and any NaN/Inf.
    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape))
        , data_(std::move(data))
    {
        check_shape();
        if ( data_.size() != element_count(shape_) )
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape product " +
                                 std::to_string(element_count(shape_)));
        for ( std::size_t i = 0; i < data_.size(); ++i )
            if ( !std::isfinite(data_[i]) )
                throw DomainError("non-finite tensor value at flat index " + std::to_string(i));
    }

    static Tensor vector(std::vector<double> values)
    {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows)
    {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> values;
        values.reserve(r * c);
        for ( const auto& row : rows )
        {
            if ( row.size() != c )
                throw DimensionError("ragged matrix literal");
            values.insert(values.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(values));
    }

    std::size_t rank() const noexcept { return shape_.size(); }
    const Shape& shape() const noexcept { return shape_; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k)
    {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const
    {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor&) const = default;

private:
    static std::size_t element_count(const Shape& s)
    {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    void check_shape() const
    {
        if ( shape_.empty() || shape_.size() > 3 )
            throw DimensionError("tensor rank must be 1..3, got " + std::to_string(shape_.size()));
        for ( auto e : shape_ )
            if ( e == 0 )
                throw DimensionError("tensor extents must be positive");
    }

    Shape shape_;
    std::vector<double> data_;
};

inline std::string shape_string(const Tensor::Shape& s)
{
    std::string out = "[";
    for ( std::size_t i = 0; i < s.size(); ++i )
    {
        if ( i ) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// xoshiro256** seeded through splitmix64. The integer stream is fixed by the
// algorithm and identical on every platform.
class SeededRng
{
public:
    explicit SeededRng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed)
    {
        std::uint64_t x = seed;
        for ( auto& s : state_ )
            s = splitmix64(x);
    }

    std::uint64_t next_u64()
    {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t      = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n)
    {
        if ( n == 0 )
            throw DomainError("below(0)");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do
            r = next_u64();
        while ( r >= limit );
        return r % n;
    }

    // Box-Muller; consumes two uniforms per call.
    double normal()
    {
        double u1 = uniform();
        while ( u1 <= 0.0 )
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Fisher-Yates, from the back.
    template <typename T>
    void shuffle(std::vector<T>& v)
    {
        for ( std::size_t i = v.size(); i > 1; --i )
        {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    bool operator==(const SeededRng&) const = default;

    static std::uint64_t splitmix64(std::uint64_t& x)
    {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
};

// Derives an independent seed from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream)
{
    std::uint64_t x = base ^ (0xd1b54a32d192ed03ULL * (stream + 1));
    return SeededRng::splitmix64(x);
}

inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    if ( a.rank() != 2 || b.rank() != 2 )
        throw DimensionError("matmul expects rank-2 operands");
    if ( a.extent(1) != b.extent(0) )
        throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));

    const std::size_t n = a.extent(0), inner = a.extent(1), m = b.extent(1);
    Tensor out({n, m});
    for ( std::size_t i = 0; i < n; ++i )
        for ( std::size_t j = 0; j < m; ++j )
        {
            double acc = 0.0;
            for ( std::size_t p = 0; p < inner; ++p )
                acc += a(i, p) * b(p, j);
            out(i, j) = acc;
        }
    return out;
}

// Each entry is 1 with probability p. Consumes exactly n uniforms.
inline Tensor bernoulli_mask(SeededRng& rng, std::size_t n, double p)
{
    if ( !(p >= 0.0 && p <= 1.0) )
        throw DomainError("bernoulli probability outside [0,1]: " + std::to_string(p));
    Tensor mask({n});
    for ( std::size_t i = 0; i < n; ++i )
        mask[i] = rng.uniform() < p ? 1.0 : 0.0;
    return mask;
}

// Central differences. For each coordinate i in ascending order, f is called
// at x + h e_i and then at x - h e_i; callers may rely on that order.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                                   const Tensor& x, double h)
{
    if ( !(h > 0.0) )
        throw DomainError("finite-difference step must be positive");

    Tensor probe = x;
    Tensor grad(x.shape());
    for ( std::size_t i = 0; i < x.size(); ++i )
    {
        const double orig = probe[i];
        probe[i]          = orig + h;
        const double up   = f(probe);
        probe[i]          = orig - h;
        const double down = f(probe);
        probe[i]          = orig;
        if ( !std::isfinite(up) || !std::isfinite(down) )
            throw EvaluationError("non-finite function value at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

} // namespace tfcmnn
