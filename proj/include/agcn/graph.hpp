#pragma once

// Skeleton graphs and the partitioned, normalized adjacency stack consumed by
// the spatial graph convolution.
//
// Every joint's 1-hop neighborhood is split into three subsets relative to a
// designated center joint: the joint itself (root), neighbors closer to the
// center (centripetal) and neighbors farther from it (centrifugal). Closeness
// is the breadth-first hop count; equal-hop neighbors join the root subset.

#include <agcn/errors.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace agcn {

inline constexpr std::size_t kNumSubsets = 3;
inline constexpr double kDefaultAlpha = 0.001;

enum class Subset : std::size_t { root = 0, centripetal = 1, centrifugal = 2 };

using Edge = std::pair<std::size_t, std::size_t>;

struct SkeletonSpec {
    std::string name;
    std::size_t num_joints = 0;
    std::vector<Edge> edges;
    std::size_t center = 0;

    bool operator==(const SkeletonSpec&) const = default;
};

// Dense row-major square matrix.
struct Matrix {
    std::size_t n = 0;
    std::vector<double> values;

    Matrix() = default;
    explicit Matrix(std::size_t size, double fill = 0.0) : n(size), values(size * size, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
    bool operator==(const Matrix&) const = default;
};

struct PartitionedAdjacency {
    std::array<Matrix, kNumSubsets> subsets; // binary, indexed by Subset

    const Matrix& operator[](Subset s) const { return subsets[static_cast<std::size_t>(s)]; }
    std::size_t num_joints() const { return subsets[0].n; }
};

struct NormalizedAdjacency {
    std::array<Matrix, kNumSubsets> matrices;
    std::array<std::vector<double>, kNumSubsets> degrees;    // diagonal of Lambda_k (row sums + alpha)
    std::array<std::vector<double>, kNumSubsets> in_degrees; // column sums + alpha
    double alpha = kDefaultAlpha;

    const Matrix& operator[](Subset s) const { return matrices[static_cast<std::size_t>(s)]; }
    std::size_t num_joints() const { return matrices[0].n; }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> neighbor_lists(const SkeletonSpec& spec)
{
    std::vector<std::vector<std::size_t>> adj(spec.num_joints);
    for (auto [a, b] : spec.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& list : adj)
        std::sort(list.begin(), list.end());
    return adj;
}

} // namespace detail

// Index range, self-loop and duplicate checks plus connectivity. Returns the
// list of problems found (empty when valid).
inline std::vector<std::string> spec_problems(const SkeletonSpec& spec, bool require_tree = true)
{
    std::vector<std::string> problems;
    if (spec.num_joints == 0) {
        problems.push_back("skeleton has no joints");
        return problems;
    }
    if (spec.center >= spec.num_joints)
        problems.push_back("center joint " + std::to_string(spec.center) + " out of range");
    std::set<Edge> seen;
    bool indices_ok = true;
    for (auto [a, b] : spec.edges) {
        const std::string label = std::to_string(a) + "-" + std::to_string(b);
        if (a >= spec.num_joints || b >= spec.num_joints) {
            problems.push_back("edge " + label + " references a joint outside [0, " +
                               std::to_string(spec.num_joints) + ")");
            indices_ok = false;
            continue;
        }
        if (a == b)
            problems.push_back("edge " + label + " is a self-loop");
        if (!seen.insert(std::minmax(a, b)).second)
            problems.push_back("edge " + label + " is duplicated");
    }
    if (!indices_ok || !problems.empty())
        return problems;

    const auto adj = detail::neighbor_lists(spec);
    std::vector<bool> visited(spec.num_joints, false);
    std::vector<std::size_t> stack{0};
    visited[0] = true;
    std::size_t reached = 1;
    while (!stack.empty()) {
        const auto v = stack.back();
        stack.pop_back();
        for (auto u : adj[v])
            if (!visited[u]) {
                visited[u] = true;
                ++reached;
                stack.push_back(u);
            }
    }
    if (reached != spec.num_joints)
        problems.push_back("skeleton graph is disconnected");
    else if (require_tree && spec.edges.size() != spec.num_joints - 1)
        problems.push_back("skeleton graph has a cycle (" + std::to_string(spec.edges.size()) + " edges for " +
                           std::to_string(spec.num_joints) + " joints)");
    return problems;
}

inline void validate_spec(const SkeletonSpec& spec, bool require_tree = true)
{
    const auto problems = spec_problems(spec, require_tree);
    if (problems.empty())
        return;
    std::string msg = "invalid skeleton '" + spec.name + "':";
    for (const auto& p : problems)
        msg += "\n  " + p;
    throw ValidationError(msg);
}

// Breadth-first hop count from every joint to the center joint.
inline std::vector<std::size_t> hop_distance(const SkeletonSpec& spec)
{
    validate_spec(spec, /*require_tree=*/false);
    constexpr auto unreached = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> dist(spec.num_joints, unreached);
    const auto adj = detail::neighbor_lists(spec);
    std::queue<std::size_t> frontier;
    dist[spec.center] = 0;
    frontier.push(spec.center);
    while (!frontier.empty()) {
        const auto v = frontier.front();
        frontier.pop();
        for (auto u : adj[v])
            if (dist[u] == unreached) {
                dist[u] = dist[v] + 1;
                frontier.push(u);
            }
    }
    return dist;
}

// Entry (i, j) of subset k is 1 iff joint j belongs to subset k of joint i.
inline PartitionedAdjacency build_partitions(const SkeletonSpec& spec)
{
    const auto hop = hop_distance(spec);
    const std::size_t n = spec.num_joints;
    PartitionedAdjacency pa;
    for (auto& m : pa.subsets)
        m = Matrix(n);
    auto& root = pa.subsets[static_cast<std::size_t>(Subset::root)];
    auto& closer = pa.subsets[static_cast<std::size_t>(Subset::centripetal)];
    auto& farther = pa.subsets[static_cast<std::size_t>(Subset::centrifugal)];
    for (std::size_t i = 0; i < n; ++i)
        root(i, i) = 1.0;
    for (auto [a, b] : spec.edges) {
        for (auto [i, j] : {Edge{a, b}, Edge{b, a}}) {
            if (hop[j] < hop[i])
                closer(i, j) = 1.0;
            else if (hop[j] > hop[i])
                farther(i, j) = 1.0;
            else
                root(i, j) = 1.0;
        }
    }
    return pa;
}

// A_k = Lambda_k^{-1/2} Abar_k Lambda'_k^{-1/2}. Lambda_k^{ii} = sum_j Abar_k^{ij} + alpha on the left;
// the right factor uses column sums so directed subsets stay bounded by 1/(1+alpha).
// Both factors coincide for symmetric Abar_k.
inline NormalizedAdjacency normalize(const PartitionedAdjacency& pa, double alpha = kDefaultAlpha)
{
    if (!(alpha > 0.0))
        throw ValidationError("normalization regularizer alpha must be positive");
    NormalizedAdjacency na;
    na.alpha = alpha;
    const std::size_t n = pa.num_joints();
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
        const Matrix& bar = pa.subsets[k];
        auto& deg = na.degrees[k];
        auto& in = na.in_degrees[k];
        deg.assign(n, 0.0);
        in.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                deg[i] += bar(i, j);
                in[j] += bar(i, j);
            }
        for (std::size_t i = 0; i < n; ++i) {
            deg[i] += alpha;
            in[i] += alpha;
        }
        Matrix a(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (bar(i, j) != 0.0)
                    a(i, j) = bar(i, j) / std::sqrt(deg[i] * in[j]);
        na.matrices[k] = std::move(a);
    }
    return na;
}

inline NormalizedAdjacency normalized_adjacency(const SkeletonSpec& spec, double alpha = kDefaultAlpha)
{
    return normalize(build_partitions(spec), alpha);
}

// ---------------------------------------------------------------------------
// Spec files: `key = value` lines, `#` comments.
//   name = toy9
//   n_joints = 9
//   center = 1
//   edges = 0-1 1-2 ...

inline std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

inline SkeletonSpec parse_skeleton_spec(const std::string& text)
{
    SkeletonSpec spec;
    std::vector<std::string> problems;
    bool has_joints = false, has_center = false, has_edges = false;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto parse_index = [&](const std::string& tok, std::size_t& out) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(tok, &used);
            if (used != tok.size())
                return false;
            out = static_cast<std::size_t>(v);
            return true;
        } catch (const std::exception&) {
            return false;
        }
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        auto value = trim(std::string_view(line).substr(eq + 1));
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (key == "name") {
            spec.name = value;
        } else if (key == "n_joints") {
            has_joints = parse_index(value, spec.num_joints);
            if (!has_joints)
                problems.push_back(where + "n_joints must be a non-negative integer");
        } else if (key == "center") {
            has_center = parse_index(value, spec.center);
            if (!has_center)
                problems.push_back(where + "center must be a non-negative integer");
        } else if (key == "edges") {
            has_edges = true;
            std::replace(value.begin(), value.end(), ',', ' ');
            std::istringstream toks(value);
            std::string tok;
            while (toks >> tok) {
                const auto dash = tok.find('-');
                std::size_t a = 0, b = 0;
                if (dash == std::string::npos || !parse_index(tok.substr(0, dash), a) ||
                    !parse_index(tok.substr(dash + 1), b)) {
                    problems.push_back(where + "malformed edge '" + tok + "'");
                    continue;
                }
                spec.edges.emplace_back(a, b);
            }
        } else {
            problems.push_back(where + "unknown key '" + key + "'");
        }
    }
    if (!has_joints)
        problems.push_back("missing n_joints");
    if (!has_center)
        problems.push_back("missing center");
    if (!has_edges && spec.num_joints > 1)
        problems.push_back("missing edges");
    if (problems.empty()) {
        for (const auto& p : spec_problems(spec))
            problems.push_back(p);
    }
    if (!problems.empty()) {
        std::string msg = "invalid skeleton spec:";
        for (const auto& p : problems)
            msg += "\n  " + p;
        throw ValidationError(msg);
    }
    return spec;
}

inline std::string format_skeleton_spec(const SkeletonSpec& spec)
{
    std::ostringstream os;
    os << "name = " << spec.name << '\n';
    os << "n_joints = " << spec.num_joints << '\n';
    os << "center = " << spec.center << '\n';
    os << "edges =";
    for (auto [a, b] : spec.edges)
        os << ' ' << a << '-' << b;
    os << '\n';
    return os.str();
}

inline SkeletonSpec load_skeleton_spec(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open skeleton spec '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    auto spec = parse_skeleton_spec(buf.str());
    if (spec.name.empty())
        spec.name = path;
    return spec;
}

// ---------------------------------------------------------------------------
// Built-in skeletons.

namespace skeletons {

// 9-joint synthetic body. Trunk 0 (pelvis) - 1 (mid-spine, center) - 2 (neck);
// left arm 2-3-4, right arm 2-5-6; legs 0-7 and 0-8.
inline constexpr const char* kToy9 = R"(name = toy9
n_joints = 9
center = 1
edges = 0-1 1-2 2-3 3-4 2-5 5-6 0-7 0-8
)";

inline constexpr std::size_t kToyLeftArmTip = 4;

// Kinect v2 layout, center at the spine joint (index 20).
inline constexpr const char* kNtu25 = R"(name = ntu25
n_joints = 25
center = 20
edges = 0-1 1-20 2-20 3-2 4-20 5-4 6-5 7-6 8-20 9-8 10-9 11-10 12-0 13-12 14-13 15-14 16-0 17-16 18-17 19-18 21-22 22-7 23-24 24-11
)";

// OpenPose 18-joint layout, center at the neck (index 1).
inline constexpr const char* kKinetics18 = R"(name = kinetics18
n_joints = 18
center = 1
edges = 4-3 3-2 7-6 6-5 13-12 12-11 10-9 9-8 11-5 8-2 5-1 2-1 0-1 15-0 14-0 17-15 16-14
)";

} // namespace skeletons

inline SkeletonSpec toy9() { return parse_skeleton_spec(skeletons::kToy9); }
inline SkeletonSpec ntu25() { return parse_skeleton_spec(skeletons::kNtu25); }
inline SkeletonSpec kinetics18() { return parse_skeleton_spec(skeletons::kKinetics18); }

inline std::map<std::string, SkeletonSpec> builtin_specs()
{
    return {{"toy9", toy9()}, {"ntu25", ntu25()}, {"kinetics18", kinetics18()}};
}

// A built-in name or a path to a spec file.
inline SkeletonSpec resolve_skeleton(const std::string& name_or_path)
{
    auto builtins = builtin_specs();
    if (auto it = builtins.find(name_or_path); it != builtins.end())
        return it->second;
    return load_skeleton_spec(name_or_path);
}

} // namespace agcn
