#pragma once

// Model structure notation, e.g. "C40 K5 S2 C60 K4 S2 F400 F400":
//   C<n>  convolution with n maxout output maps
//   K<n>  filter width along the sliding axis
//   S<n>  pooling window
//   F<n>  fully connected maxout layer with n units
// Every C is followed by its K and S; all conv blocks precede the F layers.

#include "tfcmnn/errors.hpp"

#include <cctype>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tfcmnn {

struct ConvBlockSpec
{
    std::size_t maps   = 0;
    std::size_t kernel = 0;
    std::size_t pool   = 0;

    bool operator==(const ConvBlockSpec&) const = default;
};

struct StructureSpec
{
    std::vector<ConvBlockSpec> conv_blocks;
    std::vector<std::size_t> fc_layers;
    std::size_t pieces = 2;
    std::optional<double> dropout;  // keep probability
    std::size_t width = 15;

    // Canonical notation; covers only the C/K/S/F tokens.
    std::string canonical() const
    {
        std::string out;
        auto emit = [&](char c, std::size_t n) {
            if ( !out.empty() )
                out += ' ';
            out += c;
            out += std::to_string(n);
        };
        for ( const auto& b : conv_blocks )
        {
            emit('C', b.maps);
            emit('K', b.kernel);
            emit('S', b.pool);
        }
        for ( auto f : fc_layers )
            emit('F', f);
        return out;
    }

    bool operator==(const StructureSpec&) const = default;
};

inline StructureSpec parse_structure(std::string_view text)
{
    std::vector<std::string> tokens;
    {
        std::istringstream in{std::string(text)};
        std::string tok;
        while ( in >> tok )
            tokens.push_back(tok);
    }
    if ( tokens.empty() )
        throw ParseError(1, "empty structure string");

    StructureSpec spec;
    enum class Expect { any, kernel, pool } expect = Expect::any;
    std::size_t open_conv = 0;  // position of the C awaiting its K/S

    for ( std::size_t i = 0; i < tokens.size(); ++i )
    {
        const std::size_t pos = i + 1;
        const std::string& tok = tokens[i];
        const char letter      = tok[0];
        if ( letter != 'C' && letter != 'K' && letter != 'S' && letter != 'F' )
            throw ParseError(pos, "unknown token '" + tok + "'");
        const std::string digits = tok.substr(1);
        if ( digits.empty() )
            throw ParseError(pos, "token '" + tok + "' has no count");
        for ( char c : digits )
            if ( !std::isdigit(static_cast<unsigned char>(c)) )
                throw ParseError(pos, "non-numeric suffix in '" + tok + "'");
        if ( digits.size() > 9 )
            throw ParseError(pos, "count too large in '" + tok + "'");
        const auto n = static_cast<std::size_t>(std::stoul(digits));
        if ( n == 0 )
            throw ParseError(pos, "count must be positive in '" + tok + "'");

        switch ( letter )
        {
        case 'C':
            if ( expect != Expect::any )
                throw ParseError(pos, "C block at token " + std::to_string(open_conv) + " is missing its " +
                                          (expect == Expect::kernel ? "K" : "S"));
            if ( !spec.fc_layers.empty() )
                throw ParseError(pos, "F layer before the last conv block");
            spec.conv_blocks.push_back({n, 0, 0});
            open_conv = pos;
            expect    = Expect::kernel;
            break;
        case 'K':
            if ( expect != Expect::kernel )
                throw ParseError(pos, "dangling K without a preceding C");
            spec.conv_blocks.back().kernel = n;
            expect = Expect::pool;
            break;
        case 'S':
            if ( expect != Expect::pool )
                throw ParseError(pos, "dangling S without a preceding C K");
            spec.conv_blocks.back().pool = n;
            expect = Expect::any;
            break;
        case 'F':
            if ( expect != Expect::any )
                throw ParseError(pos, "C block at token " + std::to_string(open_conv) + " is missing its " +
                                          (expect == Expect::kernel ? "K" : "S"));
            spec.fc_layers.push_back(n);
            break;
        }
    }
    if ( expect != Expect::any )
        throw ParseError(open_conv, "C block is missing its " + std::string(expect == Expect::kernel ? "K" : "S"));
    if ( spec.fc_layers.empty() )
        throw ParseError(tokens.size() + 1, "at least one F layer is required");
    return spec;
}

} // namespace tfcmnn
