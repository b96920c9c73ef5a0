#pragma once

// SGD with Nesterov momentum, step learning-rate schedule, the training loop,
// evaluation metrics, softmax score files and two-stream fusion.

#include <agcn/data.hpp>
#include <agcn/loss.hpp>
#include <agcn/model.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace agcn {

enum class Stream { joints, bones };

inline std::string to_string(Stream s) { return s == Stream::joints ? "joints" : "bones"; }

inline Stream parse_stream(const std::string& s)
{
    if (s == "joints")
        return Stream::joints;
    if (s == "bones")
        return Stream::bones;
    throw ValidationError("unknown stream '" + s + "' (expected joints or bones)");
}

inline std::vector<SkeletonSequence> prepare_stream(std::vector<SkeletonSequence> seqs, Stream stream,
                                                    const SkeletonSpec& spec)
{
    if (stream == Stream::bones)
        for (auto& s : seqs)
            s = joints_to_bones(s, spec);
    return seqs;
}

// ---------------------------------------------------------------------------
// Optimizer

struct SgdOptions {
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool nesterov = true;
};

// g' = g + wd * p;  b = mu * b + g';  update = nesterov ? g' + mu * b : b;  p -= lr * update
template <class T>
void sgd_update(std::span<T> p, std::span<const T> g, std::span<T> buffer, T lr, const SgdOptions& opt)
{
    if (p.size() != g.size() || p.size() != buffer.size())
        throw DimensionError("sgd_update: parameter, gradient and buffer sizes " + std::to_string(p.size()) + ", " +
                             std::to_string(g.size()) + ", " + std::to_string(buffer.size()) + " differ");
    const T mu = static_cast<T>(opt.momentum);
    const T wd = static_cast<T>(opt.weight_decay);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T gi = g[i] + wd * p[i];
        buffer[i] = mu * buffer[i] + gi;
        const T update = opt.nesterov ? gi + mu * buffer[i] : buffer[i];
        p[i] -= lr * update;
    }
}

template <class T>
class Sgd {
public:
    Sgd(ParameterSet<T>& params, SgdOptions opt) : params_(&params), opt_(opt)
    {
        if (!(opt.momentum >= 0.0 && opt.momentum < 1.0))
            throw ValidationError("momentum must lie in [0, 1)");
        if (!(opt.weight_decay >= 0.0))
            throw ValidationError("weight decay must be non-negative");
        for (const auto& e : params.entries())
            if (e.trainable)
                buffers_.emplace_back(e.tensor.size(), T(0));
    }

    // Parameters that received no gradient are treated as having a zero task
    // gradient (weight decay still applies).
    void step(double lr)
    {
        std::size_t b = 0;
        std::vector<T> zeros;
        for (auto& e : params_->entries()) {
            if (!e.trainable)
                continue;
            auto& buf = buffers_.at(b++);
            if (buf.size() != e.tensor.size())
                throw DimensionError("optimizer state for '" + e.name + "' no longer matches the parameter");
            std::span<const T> g = e.tensor.grad();
            if (!e.tensor.has_grad()) {
                zeros.assign(e.tensor.size(), T(0));
                g = zeros;
            }
            sgd_update<T>(e.tensor.mutable_data(), g, buf, static_cast<T>(lr), opt_);
        }
    }

    const std::vector<std::vector<T>>& buffers() const { return buffers_; }

private:
    ParameterSet<T>* params_;
    SgdOptions opt_;
    std::vector<std::vector<T>> buffers_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule

struct LrSchedule {
    double base_lr = 0.1;
    std::vector<std::size_t> milestones;
    double factor = 0.1;
    std::size_t end_epoch = 0;
};

inline LrSchedule ntu_schedule() { return {0.1, {30, 40}, 0.1, 50}; }
inline LrSchedule kinetics_schedule() { return {0.1, {45, 55}, 0.1, 65}; }
// Batch 16 on toy data; 0.025 (linear batch scaling of 0.1) destabilizes the
// learned C term mid-run.
inline LrSchedule desk_schedule() { return {0.01, {60, 80}, 0.1, 100}; }

inline std::vector<std::string> schedule_problems(const LrSchedule& s)
{
    std::vector<std::string> problems;
    if (!(s.base_lr >= 0.0))
        problems.push_back("base learning rate must be non-negative");
    if (!(s.factor > 0.0))
        problems.push_back("learning-rate decay factor must be positive");
    for (std::size_t i = 0; i < s.milestones.size(); ++i) {
        if (i > 0 && s.milestones[i] <= s.milestones[i - 1])
            problems.push_back("milestones must be strictly increasing");
        if (s.milestones[i] >= s.end_epoch)
            problems.push_back("milestone " + std::to_string(s.milestones[i]) + " is not before the last epoch " +
                               std::to_string(s.end_epoch));
    }
    return problems;
}

// base_lr * factor^(number of milestones <= epoch); epochs count from 0.
inline double lr_at(const LrSchedule& s, std::size_t epoch)
{
    double lr = s.base_lr;
    for (auto m : s.milestones)
        if (m <= epoch)
            lr *= s.factor;
    return lr;
}

// ---------------------------------------------------------------------------
// Metrics and scores

inline bool in_top_k(std::span<const double> scores, std::size_t label, std::size_t k)
{
    std::size_t better = 0;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > scores[label] || (scores[j] == scores[label] && j < label))
            ++better;
    return better < k;
}

inline std::size_t argmax(std::span<const double> v)
{
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct ScoreRow {
    std::string id;
    std::vector<float> scores;

    bool operator==(const ScoreRow&) const = default;
};

struct Accuracy {
    double top1 = 0.0;
    double top5 = 0.0;
    std::vector<double> per_class; // NaN for classes without samples
    std::size_t samples = 0;
};

inline Accuracy accuracy_of(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels,
                            std::size_t num_classes)
{
    if (scores.size() != labels.size())
        throw DimensionError("accuracy: " + std::to_string(scores.size()) + " score rows for " +
                             std::to_string(labels.size()) + " labels");
    Accuracy acc;
    acc.samples = scores.size();
    std::vector<std::size_t> hit(num_classes, 0), count(num_classes, 0);
    std::size_t top1 = 0, top5 = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto label = labels[i];
        if (label >= num_classes || scores[i].size() != num_classes)
            throw DimensionError("accuracy: row " + std::to_string(i) + " does not match " +
                                 std::to_string(num_classes) + " classes");
        const bool h1 = in_top_k(scores[i], label, 1);
        top1 += h1;
        top5 += in_top_k(scores[i], label, 5);
        hit[label] += h1;
        ++count[label];
    }
    if (acc.samples) {
        acc.top1 = static_cast<double>(top1) / static_cast<double>(acc.samples);
        acc.top5 = static_cast<double>(top5) / static_cast<double>(acc.samples);
    }
    for (std::size_t k = 0; k < num_classes; ++k)
        acc.per_class.push_back(count[k] ? static_cast<double>(hit[k]) / static_cast<double>(count[k]) : NAN);
    return acc;
}

inline std::vector<std::vector<double>> score_matrix(const std::vector<ScoreRow>& rows)
{
    std::vector<std::vector<double>> out;
    for (const auto& r : rows)
        out.emplace_back(r.scores.begin(), r.scores.end());
    return out;
}

inline std::string format_scores(const std::vector<ScoreRow>& rows)
{
    std::string out;
    char buf[32];
    for (const auto& r : rows) {
        out += r.id;
        out += '\t';
        for (std::size_t j = 0; j < r.scores.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(r.scores[j]));
            if (j)
                out += ' ';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline std::vector<ScoreRow> parse_scores(const std::string& text, const std::string& source = "score file")
{
    std::vector<ScoreRow> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError(source + " line " + std::to_string(lineno) + ": missing tab after the sample id");
        ScoreRow row{line.substr(0, tab), {}};
        std::istringstream vals(line.substr(tab + 1));
        std::string tok;
        while (vals >> tok) {
            char* end = nullptr;
            const float v = std::strtof(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size() || !std::isfinite(v))
                throw FormatError(source + " line " + std::to_string(lineno) + ": bad score '" + tok + "'");
            row.scores.push_back(v);
        }
        if (!rows.empty() && row.scores.size() != rows.front().scores.size())
            throw FormatError(source + " line " + std::to_string(lineno) + ": " + std::to_string(row.scores.size()) +
                              " scores, expected " + std::to_string(rows.front().scores.size()));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_scores(const std::filesystem::path& path, const std::vector<ScoreRow>& rows)
{
    detail::write_file(path, format_scores(rows));
}

inline std::vector<ScoreRow> read_scores(const std::filesystem::path& path)
{
    return parse_scores(detail::read_file(path), path.string());
}

// Fused score = J + weight_b * B per entry (a plain float sum at weight 1).
inline std::vector<ScoreRow> fuse_scores(const std::vector<ScoreRow>& joints, const std::vector<ScoreRow>& bones,
                                         float weight_b = 1.0f)
{
    if (joints.size() != bones.size())
        throw ValidationError("score files hold " + std::to_string(joints.size()) + " and " +
                              std::to_string(bones.size()) + " samples");
    std::vector<ScoreRow> out;
    out.reserve(joints.size());
    for (std::size_t i = 0; i < joints.size(); ++i) {
        if (joints[i].id != bones[i].id)
            throw ValidationError("sample id mismatch at row " + std::to_string(i + 1) + ": '" + joints[i].id +
                                  "' vs '" + bones[i].id + "'");
        if (joints[i].scores.size() != bones[i].scores.size())
            throw ValidationError("class count mismatch for sample '" + joints[i].id + "'");
        ScoreRow r{joints[i].id, joints[i].scores};
        for (std::size_t j = 0; j < r.scores.size(); ++j)
            r.scores[j] = weight_b == 1.0f ? r.scores[j] + bones[i].scores[j] : r.scores[j] + weight_b * bones[i].scores[j];
        out.push_back(std::move(r));
    }
    return out;
}

// Labels for score rows, looked up by sample id (the file stem) in a manifest.
inline std::vector<std::size_t> labels_for(const std::vector<ScoreRow>& rows, const DatasetManifest& m)
{
    std::map<std::string, std::size_t> by_id;
    for (const auto& r : m.records)
        by_id[std::filesystem::path(r.path).stem().string()] = r.label;
    std::vector<std::size_t> labels;
    for (const auto& r : rows) {
        auto it = by_id.find(r.id);
        if (it == by_id.end())
            throw ValidationError("sample '" + r.id + "' is not listed in the manifest");
        labels.push_back(it->second);
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    Accuracy accuracy;
    double loss = 0.0;
    std::vector<ScoreRow> scores;
};

template <class T>
EvalResult evaluate(Network<T>& net, const std::vector<SkeletonSequence>& seqs, std::size_t batch_size = 16)
{
    if (seqs.empty())
        throw ValidationError("nothing to evaluate: empty split");
    NoGradScope<T> no_grad;
    const std::size_t K = net.config().num_classes;
    EvalResult res;
    std::vector<std::vector<double>> probs;
    std::vector<std::size_t> labels;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < seqs.size(); begin += batch_size) {
        const std::size_t end = std::min(seqs.size(), begin + batch_size);
        std::vector<const SkeletonSequence*> batch;
        for (std::size_t i = begin; i < end; ++i)
            batch.push_back(&seqs[i]);
        const auto logits = net.forward(to_batch<T>(batch), Mode::eval);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            std::vector<double> row(K);
            double mx = -INFINITY;
            for (std::size_t k = 0; k < K; ++k)
                mx = std::max(mx, row[k] = static_cast<double>(logits[b * K + k]));
            double z = 0.0;
            for (auto& v : row)
                z += (v = std::exp(v - mx));
            for (auto& v : row)
                v /= z;
            const auto label = batch[b]->label;
            if (label >= K)
                throw ValidationError("sample '" + batch[b]->id + "' has label " + std::to_string(label) +
                                      " but the network has " + std::to_string(K) + " classes");
            loss_sum -= std::log(std::max(row[label], 1e-300));
            res.scores.push_back({batch[b]->id, std::vector<float>(row.begin(), row.end())});
            probs.push_back(std::move(row));
            labels.push_back(label);
        }
    }
    res.accuracy = accuracy_of(probs, labels, K);
    res.loss = loss_sum / static_cast<double>(seqs.size());
    return res;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    LrSchedule schedule = desk_schedule();
    SgdOptions sgd;
    std::uint64_t seed = 0;
    bool augment = false;
    std::size_t crop_frames = 0; // 0 keeps full length when augmenting
};

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_top1 = 0.0; // running accuracy over the epoch's training batches
    double train_top5 = 0.0;
    double val_loss = NAN;
    double val_top1 = NAN;
    double val_top5 = NAN;
    double seconds = 0.0; // wall time; excluded from determinism comparisons

    bool same_metrics(const EpochLog& o) const
    {
        auto eq = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        return epoch == o.epoch && eq(lr, o.lr) && eq(loss, o.loss) && eq(train_top1, o.train_top1) &&
               eq(train_top5, o.train_top5) && eq(val_loss, o.val_loss) && eq(val_top1, o.val_top1) &&
               eq(val_top5, o.val_top5);
    }
};

struct TrainReport {
    std::vector<EpochLog> epochs;
    std::size_t param_count = 0;
    std::string checkpoint;

    double best_train_top1() const
    {
        double best = 0.0;
        for (const auto& e : epochs)
            best = std::max(best, e.train_top1);
        return best;
    }

    bool same_metrics(const TrainReport& o) const
    {
        if (epochs.size() != o.epochs.size() || param_count != o.param_count)
            return false;
        for (std::size_t i = 0; i < epochs.size(); ++i)
            if (!epochs[i].same_metrics(o.epochs[i]))
                return false;
        return true;
    }

    static std::string format_line(const EpochLog& e)
    {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "epoch %zu lr %.6g loss %.9g train_top1 %.6f train_top5 %.6f val_loss %.9g val_top1 %.6f "
                      "val_top5 %.6f time %.3fs",
                      e.epoch + 1, e.lr, e.loss, e.train_top1, e.train_top5, e.val_loss, e.val_top1, e.val_top5,
                      e.seconds);
        return buf;
    }

    std::string log_text() const
    {
        std::string out;
        for (const auto& e : epochs)
            out += format_line(e) + "\n";
        return out;
    }

    // Machine-readable key = value summary.
    std::string summary() const
    {
        char buf[128];
        std::string out = "epochs = " + std::to_string(epochs.size()) + "\n";
        out += "param_count = " + std::to_string(param_count) + "\n";
        if (!epochs.empty()) {
            const auto& e = epochs.back();
            auto put = [&](const char* key, double v) {
                std::snprintf(buf, sizeof buf, "%s = %.9g\n", key, v);
                out += buf;
            };
            put("final_loss", e.loss);
            put("final_train_top1", e.train_top1);
            put("final_train_top5", e.train_top5);
            put("best_train_top1", best_train_top1());
            put("final_val_top1", e.val_top1);
            put("final_val_top5", e.val_top5);
        }
        if (!checkpoint.empty())
            out += "checkpoint = " + checkpoint + "\n";
        return out;
    }
};

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng)
{
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
}

} // namespace detail

// Runs options.epochs epochs of SGD over `train_set`, evaluating on `val_set`
// after each epoch when it is non-empty. Everything random derives from
// options.seed.
template <class T>
TrainReport train(Network<T>& net, const std::vector<SkeletonSequence>& train_set,
                  const std::vector<SkeletonSequence>& val_set, const TrainOptions& options,
                  const std::function<void(const EpochLog&)>& on_epoch = {})
{
    if (train_set.empty())
        throw ValidationError("training split is empty");
    if (options.batch_size == 0)
        throw ValidationError("batch size must be positive");
    if (options.crop_frames && !options.augment)
        throw ValidationError("a crop length requires augmentation to be enabled");
    auto sched = options.schedule;
    if (sched.end_epoch == 0)
        sched.end_epoch = options.epochs;
    if (auto problems = schedule_problems(sched); !problems.empty())
        throw ValidationError("invalid learning-rate schedule: " + problems.front());

    Sgd<T> opt(net.parameters(), options.sgd);
    TrainReport report;
    report.param_count = net.count_params();
    const std::size_t K = net.config().num_classes;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr_at(sched, epoch);
        std::mt19937_64 rng(mix_seed(options.seed, epoch));
        detail::shuffle_indices(order, rng);

        double loss_sum = 0.0;
        std::size_t top1 = 0, top5 = 0, batch_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), begin + options.batch_size);
            std::vector<SkeletonSequence> augmented;
            std::vector<const SkeletonSequence*> batch;
            std::vector<std::size_t> targets;
            for (std::size_t i = begin; i < end; ++i) {
                const auto& s = train_set[order[i]];
                if (s.label >= K)
                    throw ValidationError("training sample '" + s.id + "' has label " + std::to_string(s.label) +
                                          " but the network has " + std::to_string(K) + " classes");
                targets.push_back(s.label);
            }
            if (options.augment) {
                for (std::size_t i = begin; i < end; ++i) {
                    const auto& s = train_set[order[i]];
                    augmented.push_back(augment(s, options.crop_frames ? options.crop_frames : s.T, rng));
                }
                for (const auto& a : augmented)
                    batch.push_back(&a);
            } else {
                for (std::size_t i = begin; i < end; ++i)
                    batch.push_back(&train_set[order[i]]);
            }

            net.parameters().zero_grad();
            Tape<T> tape;
            Tensor<T> logits, loss;
            {
                TapeScope<T> scope(tape);
                logits = net.forward(to_batch<T>(batch), Mode::train, mix_seed(options.seed ^ 0x5eed, epoch * 1000003 + batch_index));
                loss = cross_entropy(logits, std::span<const std::size_t>(targets));
            }
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw TrainingError("non-finite loss " + std::to_string(lv) + " at epoch " + std::to_string(epoch + 1) +
                                    ", batch " + std::to_string(batch_index + 1));
            tape.backward(loss);
            opt.step(log.lr);

            loss_sum += lv * static_cast<double>(batch.size());
            for (std::size_t b = 0; b < batch.size(); ++b) {
                std::vector<double> row(K);
                for (std::size_t k = 0; k < K; ++k)
                    row[k] = static_cast<double>(logits[b * K + k]);
                top1 += in_top_k(row, targets[b], 1);
                top5 += in_top_k(row, targets[b], 5);
            }
        }
        const double n = static_cast<double>(train_set.size());
        log.loss = loss_sum / n;
        log.train_top1 = static_cast<double>(top1) / n;
        log.train_top5 = static_cast<double>(top5) / n;
        if (!val_set.empty()) {
            const auto ev = evaluate(net, val_set, options.batch_size);
            log.val_loss = ev.loss;
            log.val_top1 = ev.accuracy.top1;
            log.val_top5 = ev.accuracy.top5;
        }
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        report.epochs.push_back(log);
        if (on_epoch)
            on_epoch(log);
    }
    return report;
}

} // namespace agcn
