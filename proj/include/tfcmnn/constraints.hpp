#pragma once

#include "tfcmnn/errors.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tfcmnn {

struct MaxNormSpec
{
    double radius  = 0.8;  // C
    bool enabled   = true;

    void validate() const
    {
        if ( !(radius > 0.0) )
            throw DomainError("max-norm radius must be positive, got " + std::to_string(radius));
    }
};

// A weight vector stored with a fixed stride inside a larger buffer, e.g. one
// maxout piece's incoming weights W[., i, j].
struct StridedRow
{
    double* base       = nullptr;
    std::size_t length = 0;
    std::size_t stride = 1;

    double& operator[](std::size_t i) const { return base[i * stride]; }

    double norm() const
    {
        double sq = 0.0;
        for ( std::size_t i = 0; i < length; ++i )
            sq += (*this)[i] * (*this)[i];
        return std::sqrt(sq);
    }
};

// Rescales onto the sphere of radius C when outside it; direction unchanged.
// Returns true if the row was rescaled.
inline bool max_norm_project(const StridedRow& row, double radius)
{
    if ( !(radius > 0.0) )
        throw DomainError("max-norm radius must be positive");
    const double n = row.norm();
    if ( n <= radius )
        return false;
    std::vector<double> orig(row.length);
    for ( std::size_t i = 0; i < row.length; ++i )
        orig[i] = row[i];

    // Rounding can leave the result a hair above C, which would make a second
    // projection move it again. Step the scale down an ulp until it lands inside.
    double scale = radius / n;
    for ( ;; )
    {
        for ( std::size_t i = 0; i < row.length; ++i )
            row[i] = orig[i] * scale;
        if ( row.norm() <= radius )
            break;
        scale = std::nextafter(scale, 0.0);
    }
    return true;
}

inline std::vector<double> max_norm_project(std::vector<double> w, double radius)
{
    max_norm_project(StridedRow{w.data(), w.size(), 1}, radius);
    return w;
}

} // namespace tfcmnn
