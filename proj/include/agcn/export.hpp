#pragma once

// Adjacency inspection: pull A_k, B_k, C_k or their sum out of a layer and
// write it as an 8-bit binary PGM (row = source joint, column = target joint).

#include "data.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

namespace agcn {

enum class GraphTerm { A, B, C, sum };

inline GraphTerm parse_graph_term(const std::string& s)
{
    if (s == "A")
        return GraphTerm::A;
    if (s == "B")
        return GraphTerm::B;
    if (s == "C")
        return GraphTerm::C;
    if (s == "sum")
        return GraphTerm::sum;
    throw ValidationError("unknown graph term '" + s + "' (expected A, B, C or sum)");
}

namespace detail {

template <class T>
Matrix to_matrix(std::span<const T> v, std::size_t n)
{
    Matrix m(n);
    for (std::size_t i = 0; i < n * n; ++i)
        m.values[i] = static_cast<double>(v[i]);
    return m;
}

inline void add_into(Matrix& a, const Matrix& b)
{
    for (std::size_t i = 0; i < a.values.size(); ++i)
        a.values[i] += b.values[i];
}

} // namespace detail

// C_k of block `layer` (0-based) for the first person of `sample`.
template <class T>
Matrix sample_graph(Network<T>& net, std::size_t layer, std::size_t subset, const SkeletonSequence& sample)
{
    const auto& blk = net.block(layer);
    if (!blk.adaptive || !blk.config.terms.use_C)
        throw ValidationError("layer " + std::to_string(layer + 1) + " has no data-dependent graph");
    NoGradScope<T> no_grad;
    std::vector<Tensor<T>> inputs;
    net.forward(to_batch<T>({&sample}), Mode::eval, 0, &inputs);
    const auto& x = inputs.at(layer); // [M, C, T, N]
    const Shape one{1, x.dim(1), x.dim(2), x.dim(3)};
    Tensor<T> first(one, std::vector<T>(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(numel(one))));
    const auto c = embedded_gaussian(first, blk.adaptive->theta[subset], blk.adaptive->phi[subset]);
    return detail::to_matrix<T>(c.data(), x.dim(3));
}

// Graph term `term` of subset `subset` in block `layer` (0-based). Baseline
// layers expose A (the fixed graph) and sum (A masked by M). C and any sum
// containing C need a sample.
template <class T>
Matrix layer_graph(Network<T>& net, std::size_t layer, std::size_t subset, GraphTerm term,
                   const SkeletonSequence* sample = nullptr)
{
    if (layer >= net.num_blocks())
        throw ValidationError("layer " + std::to_string(layer + 1) + " out of range: the network has " +
                              std::to_string(net.num_blocks()) + " blocks");
    if (subset >= kNumSubsets)
        throw ValidationError("subset " + std::to_string(subset) + " out of range [0, " + std::to_string(kNumSubsets) +
                              ")");
    const std::size_t n = net.config().skeleton.num_joints;
    const auto& blk = net.block(layer);
    const Matrix A = detail::to_matrix<T>(net.adjacency()[subset].data(), n);
    if (blk.baseline) {
        if (term == GraphTerm::A)
            return A;
        if (term == GraphTerm::sum) {
            if (!blk.baseline->use_mask)
                return A;
            Matrix out = A;
            const auto M = blk.baseline->M[subset].data();
            for (std::size_t i = 0; i < out.values.size(); ++i)
                out.values[i] *= static_cast<double>(M[i]);
            return out;
        }
        throw ValidationError("layer " + std::to_string(layer + 1) + " is a baseline layer without B or C terms");
    }
    const auto& terms = blk.config.terms;
    auto need = [&](bool on, const char* name) {
        if (!on)
            throw ValidationError(std::string("term ") + name + " is disabled in layer " + std::to_string(layer + 1));
    };
    auto need_sample = [&] {
        if (!sample)
            throw ValidationError("term C depends on the input: pass a sample");
    };
    switch (term) {
    case GraphTerm::A:
        need(terms.use_A, "A");
        return A;
    case GraphTerm::B:
        need(terms.use_B, "B");
        return detail::to_matrix<T>(blk.adaptive->B[subset].data(), n);
    case GraphTerm::C:
        need(terms.use_C, "C");
        need_sample();
        return sample_graph(net, layer, subset, *sample);
    case GraphTerm::sum: {
        Matrix out(n);
        if (terms.use_A)
            detail::add_into(out, A);
        if (terms.use_B)
            detail::add_into(out, detail::to_matrix<T>(blk.adaptive->B[subset].data(), n));
        if (terms.use_C) {
            need_sample();
            detail::add_into(out, sample_graph(net, layer, subset, *sample));
        }
        return out;
    }
    }
    return A;
}

// ---------------------------------------------------------------------------
// PGM

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    double min = 0.0;
    double max = 0.0;
    std::vector<unsigned char> pixels; // row-major

    // Value represented by a pixel under the header scale.
    double value(std::size_t i) const
    {
        return max > min ? min + (max - min) * (pixels[i] / 255.0) : pixels[i] / 255.0;
    }
};

// Linear min-max scaling to 0..255. A constant matrix has no range to
// stretch; its values are then mapped on the absolute [0, 1] scale.
inline GrayImage to_gray(const Matrix& m)
{
    GrayImage img;
    img.width = img.height = m.n;
    if (m.values.empty())
        throw ValidationError("cannot export an empty matrix");
    img.min = *std::min_element(m.values.begin(), m.values.end());
    img.max = *std::max_element(m.values.begin(), m.values.end());
    img.pixels.reserve(m.values.size());
    for (double v : m.values) {
        const double s = img.max > img.min ? (v - img.min) / (img.max - img.min) : v;
        img.pixels.push_back(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0)));
    }
    return img;
}

inline std::string encode_pgm(const GrayImage& img)
{
    char head[160];
    std::snprintf(head, sizeof head, "P5\n# min %.17g max %.17g\n%zu %zu\n255\n", img.min, img.max, img.width,
                  img.height);
    std::string out(head);
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline GrayImage decode_pgm(std::string_view bytes)
{
    GrayImage img;
    std::size_t pos = 0;
    auto token = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos])))
                ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                const auto eol = bytes.find('\n', pos);
                const auto comment = bytes.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
                std::sscanf(std::string(comment).c_str(), "# min %lf max %lf", &img.min, &img.max);
                pos = eol == std::string_view::npos ? bytes.size() : eol + 1;
                continue;
            }
            break;
        }
        const auto start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
            ++pos;
        return std::string(bytes.substr(start, pos - start));
    };
    if (token() != "P5")
        throw FormatError("not a binary PGM (P5) image");
    try {
        img.width = std::stoul(token());
        img.height = std::stoul(token());
        if (std::stoul(token()) != 255)
            throw FormatError("only 8-bit PGM images are supported");
    } catch (const std::logic_error&) {
        throw FormatError("malformed PGM header");
    }
    ++pos; // single whitespace after maxval
    if (bytes.size() < pos || bytes.size() - pos != img.width * img.height)
        throw TruncationError("PGM holds " + std::to_string(bytes.size() - std::min(pos, bytes.size())) +
                              " pixel bytes, header declares " + std::to_string(img.width * img.height));
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

inline void write_pgm(const std::filesystem::path& path, const Matrix& m)
{
    detail::write_file(path, encode_pgm(to_gray(m)));
}

inline GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(detail::read_file(path)); }

} // namespace agcn
