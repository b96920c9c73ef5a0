#pragma once

// Adaptive graph convolution network.
//
// Spatial layer, adaptive form:
//     f_out = sum_k W_k f_in (A_k + B_k + C_k)  [+ residual]
// with A_k the normalized physical adjacency, B_k a free learned N x N matrix
// and C_k = softmax_rows(theta(f_in)^T phi(f_in)) a per-sample graph from an
// embedded-Gaussian similarity. Graphs act on the joint axis from the right:
// (f G)[:, :, i] = sum_j f[:, :, j] G[j, i].
//
// Spatial layer, baseline form: f_out = sum_k W_k f_in (A_k .* M_k).
//
// Block: ReLU(TemporalBN(TemporalConv(Dropout(ReLU(BN(Spatial(x)))))) + Residual(x)).
// Network: data BN, 9 blocks, global average pooling, linear classifier.

#include <agcn/graph.hpp>
#include <agcn/ops.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace agcn {

enum class Mode { train, eval };
enum class LayerKind { adaptive, baseline };

struct GraphTerms {
    bool use_A = true;
    bool use_B = true;
    bool use_C = true;

    bool any() const { return use_A || use_B || use_C; }
    bool operator==(const GraphTerms&) const = default;
};

struct BlockConfig {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t stride = 1;
    std::size_t temporal_kernel = 9;
    double dropout = 0.5;
    LayerKind kind = LayerKind::adaptive;
    GraphTerms terms;
    bool use_mask = true; // baseline layers only
    std::size_t embed_channels = 0; // 0 selects max(1, out_channels / 4)

    std::size_t embed() const { return embed_channels ? embed_channels : std::max<std::size_t>(1, out_channels / 4); }
    bool operator==(const BlockConfig&) const = default;
};

struct NetworkConfig {
    SkeletonSpec skeleton;
    std::vector<BlockConfig> blocks;
    std::size_t num_classes = 0;
    std::size_t max_persons = 1;
    std::size_t in_channels = 3;
    double alpha = kDefaultAlpha;

    bool operator==(const NetworkConfig&) const = default;
};

inline const std::vector<std::size_t>& default_channel_plan()
{
    static const std::vector<std::size_t> plan{64, 64, 64, 128, 128, 128, 256, 256, 256};
    return plan;
}

// Same layout at an eighth of the width, for single-core toy runs.
inline const std::vector<std::size_t>& desk_channel_plan()
{
    static const std::vector<std::size_t> plan{8, 8, 8, 16, 16, 16, 32, 32, 32};
    return plan;
}

inline const std::vector<std::size_t>& default_stride_plan()
{
    static const std::vector<std::size_t> plan{1, 1, 1, 2, 1, 1, 2, 1, 1};
    return plan;
}

struct NetworkOptions {
    std::vector<std::size_t> channels = default_channel_plan();
    std::vector<std::size_t> strides = default_stride_plan();
    std::size_t temporal_kernel = 9;
    double dropout = 0.5;
    LayerKind kind = LayerKind::adaptive;
    GraphTerms terms;
    bool use_mask = true;
    std::size_t embed_channels = 0;
    double alpha = kDefaultAlpha;
};

inline NetworkConfig make_network_config(SkeletonSpec skeleton, std::size_t in_channels, std::size_t num_classes,
                                         std::size_t max_persons, const NetworkOptions& opt = {})
{
    if (opt.channels.size() != opt.strides.size())
        throw ValidationError("channel plan and stride plan differ in length");
    NetworkConfig cfg;
    cfg.skeleton = std::move(skeleton);
    cfg.num_classes = num_classes;
    cfg.max_persons = max_persons;
    cfg.in_channels = in_channels;
    cfg.alpha = opt.alpha;
    std::size_t prev = in_channels;
    for (std::size_t i = 0; i < opt.channels.size(); ++i) {
        BlockConfig b;
        b.in_channels = prev;
        b.out_channels = opt.channels[i];
        b.stride = opt.strides[i];
        b.temporal_kernel = opt.temporal_kernel;
        b.dropout = opt.dropout;
        b.kind = opt.kind;
        b.terms = opt.terms;
        b.use_mask = opt.use_mask;
        b.embed_channels = opt.embed_channels;
        cfg.blocks.push_back(b);
        prev = opt.channels[i];
    }
    return cfg;
}

inline std::vector<std::string> network_config_problems(const NetworkConfig& cfg)
{
    std::vector<std::string> problems = spec_problems(cfg.skeleton, /*require_tree=*/false);
    if (cfg.blocks.empty())
        problems.push_back("network has no blocks");
    if (cfg.num_classes == 0)
        problems.push_back("num_classes must be positive");
    if (cfg.max_persons == 0)
        problems.push_back("max persons must be positive");
    if (cfg.in_channels == 0)
        problems.push_back("input channels must be positive");
    if (!(cfg.alpha > 0.0))
        problems.push_back("alpha must be positive");
    std::size_t prev = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& b = cfg.blocks[i];
        const std::string where = "block " + std::to_string(i + 1) + ": ";
        if (b.in_channels != prev)
            problems.push_back(where + "input channels do not match the previous block");
        if (b.out_channels == 0)
            problems.push_back(where + "output channels must be positive");
        if (b.stride == 0)
            problems.push_back(where + "stride must be positive");
        if (b.temporal_kernel % 2 == 0)
            problems.push_back(where + "temporal kernel must be odd");
        if (!(b.dropout >= 0.0 && b.dropout < 1.0))
            problems.push_back(where + "dropout rate must lie in [0, 1)");
        if (b.kind == LayerKind::adaptive && !b.terms.any())
            problems.push_back(where + "adaptive layer with A, B and C all disabled has no graph term");
        prev = b.out_channels;
    }
    return problems;
}

inline void validate_network_config(const NetworkConfig& cfg)
{
    const auto problems = network_config_problems(cfg);
    if (problems.empty())
        return;
    std::string msg = "invalid network configuration:";
    for (const auto& p : problems)
        msg += "\n  " + p;
    throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable;
    };

    Tensor<T> add(std::string name, Tensor<T> tensor, bool trainable = true)
    {
        if (find(name))
            throw ValidationError("duplicate parameter '" + name + "'");
        tensor.set_requires_grad(trainable);
        entries_.push_back({std::move(name), tensor, trainable});
        return tensor;
    }

    const Tensor<T>* find(std::string_view name) const
    {
        for (const auto& e : entries_)
            if (e.name == name)
                return &e.tensor;
        return nullptr;
    }

    const Tensor<T>& get(std::string_view name) const
    {
        if (auto* t = find(name))
            return *t;
        throw ValidationError("no parameter named '" + std::string(name) + "'");
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t trainable_count() const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable)
                n += e.tensor.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& e : entries_)
            e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng)
{
    Tensor<T> t(std::move(shape));
    for (auto& v : t.mutable_data())
        v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    return t;
}

} // namespace detail

template <class T>
struct BatchNormParams {
    Tensor<T> gamma, beta, running_mean, running_var;

    static BatchNormParams create(ParameterSet<T>& ps, const std::string& prefix, std::size_t channels)
    {
        BatchNormParams bn;
        bn.gamma = ps.add(prefix + ".gamma", Tensor<T>(Shape{channels}, T(1)));
        bn.beta = ps.add(prefix + ".beta", Tensor<T>(Shape{channels}, T(0)));
        bn.running_mean = ps.add(prefix + ".running_mean", Tensor<T>(Shape{channels}, T(0)), false);
        bn.running_var = ps.add(prefix + ".running_var", Tensor<T>(Shape{channels}, T(1)), false);
        return bn;
    }

    Tensor<T> operator()(const Tensor<T>& x, Mode mode)
    {
        return batch_norm(x, gamma, beta, running_mean, running_var, mode == Mode::train);
    }
};

template <class T>
struct AdaptiveLayer {
    GraphTerms terms;
    std::array<Tensor<T>, kNumSubsets> W; // [Cout, Cin]
    std::array<Tensor<T>, kNumSubsets> B; // [N, N], used iff terms.use_B
    std::array<Tensor<T>, kNumSubsets> theta, phi; // [Ce, Cin], used iff terms.use_C
    std::optional<Tensor<T>> residual; // [Cout, Cin] iff Cin != Cout

    static AdaptiveLayer create(ParameterSet<T>& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                                std::size_t joints, std::size_t embed, GraphTerms terms, std::mt19937_64& rng)
    {
        AdaptiveLayer layer;
        layer.terms = terms;
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
        for (std::size_t k = 0; k < kNumSubsets; ++k) {
            const auto ks = std::to_string(k);
            layer.W[k] = ps.add(prefix + ".W" + ks, detail::uniform_tensor<T>({cout, cin}, bound, rng));
            if (terms.use_B)
                layer.B[k] = ps.add(prefix + ".B" + ks, Tensor<T>(Shape{joints, joints}, T(0)));
            if (terms.use_C) {
                layer.theta[k] = ps.add(prefix + ".theta" + ks, Tensor<T>(Shape{embed, cin}, T(0)));
                // theta = 0 keeps C uniform at init; a random phi keeps theta's gradient alive
                layer.phi[k] = ps.add(prefix + ".phi" + ks, detail::uniform_tensor<T>({embed, cin}, bound, rng));
            }
        }
        if (cin != cout)
            layer.residual = ps.add(prefix + ".residual", detail::uniform_tensor<T>({cout, cin}, bound, rng));
        return layer;
    }
};

template <class T>
struct BaselineLayer {
    bool use_mask = true;
    std::array<Tensor<T>, kNumSubsets> W; // [Cout, Cin]
    std::array<Tensor<T>, kNumSubsets> M; // [N, N], used iff use_mask
    std::optional<Tensor<T>> residual;

    static BaselineLayer create(ParameterSet<T>& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                                std::size_t joints, bool use_mask, std::mt19937_64& rng)
    {
        BaselineLayer layer;
        layer.use_mask = use_mask;
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
        for (std::size_t k = 0; k < kNumSubsets; ++k) {
            const auto ks = std::to_string(k);
            layer.W[k] = ps.add(prefix + ".W" + ks, detail::uniform_tensor<T>({cout, cin}, bound, rng));
            if (use_mask)
                layer.M[k] = ps.add(prefix + ".M" + ks, Tensor<T>(Shape{joints, joints}, T(1)));
        }
        if (cin != cout)
            layer.residual = ps.add(prefix + ".residual", detail::uniform_tensor<T>({cout, cin}, bound, rng));
        return layer;
    }
};

template <class T>
using AdjacencyStack = std::array<Tensor<T>, kNumSubsets>;

template <class T>
AdjacencyStack<T> adjacency_tensors(const NormalizedAdjacency& na)
{
    AdjacencyStack<T> out;
    const std::size_t n = na.num_joints();
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
        std::vector<T> v(na.matrices[k].values.begin(), na.matrices[k].values.end());
        out[k] = Tensor<T>(Shape{n, n}, std::move(v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer operations

// C[b] = softmax over j of sum_{c,t} theta[b, c, t, i] * phi[b, c, t, j], shape [B, N, N].
template <class T>
Tensor<T> embedded_gaussian(const Tensor<T>& f_in, const Tensor<T>& w_theta, const Tensor<T>& w_phi)
{
    if (f_in.rank() != 4)
        throw DimensionError("embedded_gaussian: expected [B, C, T, N], got " + to_string(f_in.shape()));
    if (w_theta.shape() != w_phi.shape())
        throw DimensionError("embedded_gaussian: embedding weights " + to_string(w_theta.shape()) + " and " +
                             to_string(w_phi.shape()) + " differ");
    const std::size_t B = f_in.dim(0), T_len = f_in.dim(2), N = f_in.dim(3);
    const std::size_t Ce = w_theta.dim(0);
    auto theta = channel_mix(f_in, w_theta);                                          // [B, Ce, T, N]
    auto rows = reshape(permute(theta, {0, 3, 1, 2}), {B, N, Ce * T_len});           // [B, N, Ce*T]
    auto cols = reshape(channel_mix(f_in, w_phi), {B, Ce * T_len, N});               // [B, Ce*T, N]
    return softmax(matmul(rows, cols), 2);
}

// f_in[B, C, T, N] times G ([N, N] or [B, N, N]) along the joint axis.
template <class T>
Tensor<T> aggregate_joints(const Tensor<T>& f_in, const Tensor<T>& graph)
{
    const auto& s = f_in.shape();
    auto flat = reshape(f_in, {s[0], s[1] * s[2], s[3]});
    return reshape(matmul(flat, graph), s);
}

template <class T>
Tensor<T> spatial_residual(const Tensor<T>& f_in, const std::optional<Tensor<T>>& transform)
{
    return transform ? channel_mix(f_in, *transform) : f_in;
}

template <class T>
Tensor<T> adaptive_spatial_forward(const Tensor<T>& f_in, const AdaptiveLayer<T>& layer, const AdjacencyStack<T>& A,
                                   bool with_residual = true)
{
    if (!layer.terms.any())
        throw ValidationError("adaptive layer needs at least one of the A, B, C graph terms");
    std::optional<Tensor<T>> out;
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
        std::optional<Tensor<T>> graph;
        auto accumulate = [&graph](const Tensor<T>& g) { graph = graph ? add(*graph, g) : g; };
        if (layer.terms.use_A)
            accumulate(A[k]);
        if (layer.terms.use_B)
            accumulate(layer.B[k]);
        if (layer.terms.use_C)
            accumulate(embedded_gaussian(f_in, layer.theta[k], layer.phi[k]));
        auto z = channel_mix(aggregate_joints(f_in, *graph), layer.W[k]);
        out = out ? add(*out, z) : z;
    }
    if (with_residual)
        out = add(*out, spatial_residual(f_in, layer.residual));
    return *out;
}

template <class T>
Tensor<T> baseline_spatial_forward(const Tensor<T>& f_in, const BaselineLayer<T>& layer, const AdjacencyStack<T>& A,
                                   bool with_residual = true)
{
    std::optional<Tensor<T>> out;
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
        const Tensor<T> graph = layer.use_mask ? mul(A[k], layer.M[k]) : A[k];
        auto z = channel_mix(aggregate_joints(f_in, graph), layer.W[k]);
        out = out ? add(*out, z) : z;
    }
    if (with_residual)
        out = add(*out, spatial_residual(f_in, layer.residual));
    return *out;
}

// ---------------------------------------------------------------------------
// Block

template <class T>
struct Block {
    BlockConfig config;
    std::optional<AdaptiveLayer<T>> adaptive;
    std::optional<BaselineLayer<T>> baseline;
    BatchNormParams<T> spatial_bn;
    Tensor<T> temporal_weight; // [Cout, Cout, Kt, 1]
    BatchNormParams<T> temporal_bn;
    std::optional<Tensor<T>> residual_weight; // [Cout, Cin, 1, 1]
    std::optional<BatchNormParams<T>> residual_bn;

    static Block create(ParameterSet<T>& ps, const std::string& prefix, const BlockConfig& cfg, std::size_t joints,
                        std::mt19937_64& rng)
    {
        Block b;
        b.config = cfg;
        const auto cin = cfg.in_channels, cout = cfg.out_channels;
        if (cfg.kind == LayerKind::adaptive)
            b.adaptive = AdaptiveLayer<T>::create(ps, prefix + ".gcn", cin, cout, joints, cfg.embed(), cfg.terms, rng);
        else
            b.baseline = BaselineLayer<T>::create(ps, prefix + ".gcn", cin, cout, joints, cfg.use_mask, rng);
        b.spatial_bn = BatchNormParams<T>::create(ps, prefix + ".gcn_bn", cout);
        const double tbound = 1.0 / std::sqrt(static_cast<double>(cout * cfg.temporal_kernel));
        b.temporal_weight =
            ps.add(prefix + ".tcn.weight", detail::uniform_tensor<T>({cout, cout, cfg.temporal_kernel, 1}, tbound, rng));
        b.temporal_bn = BatchNormParams<T>::create(ps, prefix + ".tcn_bn", cout);
        if (cin != cout || cfg.stride != 1) {
            const double rbound = 1.0 / std::sqrt(static_cast<double>(cin));
            b.residual_weight = ps.add(prefix + ".res.weight", detail::uniform_tensor<T>({cout, cin, 1, 1}, rbound, rng));
            b.residual_bn = BatchNormParams<T>::create(ps, prefix + ".res_bn", cout);
        }
        return b;
    }

    Tensor<T> spatial(const Tensor<T>& x, const AdjacencyStack<T>& A) const
    {
        return adaptive ? adaptive_spatial_forward(x, *adaptive, A) : baseline_spatial_forward(x, *baseline, A);
    }
};

template <class T>
Tensor<T> block_forward(const Tensor<T>& x, Block<T>& block, const AdjacencyStack<T>& A, Mode mode,
                        std::uint64_t dropout_seed)
{
    const auto& cfg = block.config;
    auto s = relu(block.spatial_bn(block.spatial(x, A), mode));
    s = dropout(s, cfg.dropout, dropout_seed, mode == Mode::train);
    auto t = block.temporal_bn(temporal_conv(s, block.temporal_weight, cfg.stride, (cfg.temporal_kernel - 1) / 2), mode);
    const Tensor<T> r = block.residual_weight
                            ? (*block.residual_bn)(temporal_conv(x, *block.residual_weight, cfg.stride, 0), mode)
                            : x;
    return relu(add(t, r));
}

// ---------------------------------------------------------------------------
// Network

template <class T>
class Network {
public:
    Network(NetworkConfig config, std::uint64_t seed) : config_(std::move(config))
    {
        validate_network_config(config_);
        adjacency_ = adjacency_tensors<T>(normalized_adjacency(config_.skeleton, config_.alpha));
        std::mt19937_64 rng(seed);
        const std::size_t joints = config_.skeleton.num_joints;
        data_bn_ = BatchNormParams<T>::create(params_, "data_bn",
                                              config_.max_persons * joints * config_.in_channels);
        for (std::size_t i = 0; i < config_.blocks.size(); ++i)
            blocks_.push_back(
                Block<T>::create(params_, "block" + std::to_string(i + 1), config_.blocks[i], joints, rng));
        const std::size_t feat = config_.blocks.back().out_channels;
        const double bound = 1.0 / std::sqrt(static_cast<double>(feat));
        fc_weight_ = params_.add("fc.weight", detail::uniform_tensor<T>({feat, config_.num_classes}, bound, rng));
        fc_bias_ = params_.add("fc.bias", detail::uniform_tensor<T>({config_.num_classes}, bound, rng));
    }

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    const NetworkConfig& config() const { return config_; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }
    const AdjacencyStack<T>& adjacency() const { return adjacency_; }
    Block<T>& block(std::size_t i) { return blocks_.at(i); }
    const Block<T>& block(std::size_t i) const { return blocks_.at(i); }
    std::size_t num_blocks() const { return blocks_.size(); }

    std::size_t count_params() const { return params_.trainable_count(); }

    // seq[B, C, T, N, M] -> logits[B, num_classes]. When `block_inputs` is
    // given it receives each block's input feature map [B*M, C, T, N].
    Tensor<T> forward(const Tensor<T>& seq, Mode mode, std::uint64_t dropout_seed = 0,
                      std::vector<Tensor<T>>* block_inputs = nullptr)
    {
        const auto& s = seq.shape();
        const std::size_t C = config_.in_channels, N = config_.skeleton.num_joints, M = config_.max_persons;
        if (s.size() != 5 || s[1] != C || s[3] != N || s[4] != M)
            throw DimensionError("network input " + to_string(s) + " does not match [B, " + std::to_string(C) +
                                 ", T, " + std::to_string(N) + ", " + std::to_string(M) + "]");
        const std::size_t B = s[0], T_len = s[2];

        auto x = reshape(permute(seq, {0, 4, 3, 1, 2}), {B, M * N * C, T_len});
        x = data_bn_(x, mode);
        x = reshape(permute(reshape(x, {B, M, N, C, T_len}), {0, 1, 3, 4, 2}), {B * M, C, T_len, N});

        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (block_inputs)
                block_inputs->push_back(x);
            x = block_forward(x, blocks_[i], adjacency_, mode, mix_seed(dropout_seed, i));
        }
        const std::size_t feat = x.dim(1);
        auto pooled = mean(x, {2, 3});                               // [B*M, feat]
        auto per_sample = mean(reshape(pooled, {B, M, feat}), {1}); // [B, feat]
        return linear(per_sample, fc_weight_, fc_bias_);
    }

private:
    NetworkConfig config_;
    ParameterSet<T> params_;
    AdjacencyStack<T> adjacency_;
    BatchNormParams<T> data_bn_;
    std::vector<Block<T>> blocks_;
    Tensor<T> fc_weight_; // [feat, classes]
    Tensor<T> fc_bias_;
};

template <class T>
std::size_t count_params(const Network<T>& net)
{
    return net.count_params();
}

} // namespace agcn
