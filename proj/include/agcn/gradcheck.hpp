#pragma once

// Central finite-difference gradient checker.

#include <agcn/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace agcn {

struct GradCheckEntry {
    std::string name;
    std::size_t coords_checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-4;
    double h = 1e-5;
    bool passed = true;

    double max_rel_error() const
    {
        double m = 0.0;
        for (const auto& e : entries)
            m = std::max(m, e.max_rel_error);
        return m;
    }

    std::string to_text() const
    {
        std::ostringstream os;
        os << std::setprecision(6);
        os << "gradcheck h=" << h << " tolerance=" << tolerance << " result=" << (passed ? "PASS" : "FAIL") << '\n';
        for (const auto& e : entries) {
            os << e.name << "\tcoords=" << e.coords_checked << "\tmax_rel_error=" << e.max_rel_error
               << "\tworst_index=" << e.worst_index << "\tanalytic=" << e.analytic << "\tnumeric=" << e.numeric
               << "\t" << (e.max_rel_error < tolerance ? "ok" : "FAIL") << '\n';
        }
        return os.str();
    }
};

struct GradCheckOptions {
    double h = 1e-5;
    double tolerance = 1e-4;
    // Total coordinate budget across all tensors; 0 checks every coordinate.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Compares the tape gradient of `loss_fn` with central differences for each
// named tensor. `loss_fn` must be deterministic (dropout disabled or with a
// frozen seed) and must return a scalar.
template <class T>
GradCheckReport gradcheck(const std::function<Tensor<T>()>& loss_fn,
                          std::vector<std::pair<std::string, Tensor<T>>> tensors, GradCheckOptions opt = {})
{
    if constexpr (!std::is_same_v<T, double>) {
        throw PrecisionError("gradcheck requires double precision; finite differences are unreliable in float");
    } else {
        for (auto& [name, t] : tensors) {
            t.set_requires_grad(true);
            t.zero_grad();
        }
        {
            Tape<T> tape;
            TapeScope<T> scope(tape);
            auto loss = loss_fn();
            tape.backward(loss);
        }
        std::vector<std::vector<T>> analytic;
        std::size_t total = 0;
        for (auto& [name, t] : tensors) {
            analytic.emplace_back(t.has_grad() ? std::vector<T>(t.grad().begin(), t.grad().end())
                                               : std::vector<T>(t.size(), T(0)));
            total += t.size();
        }

        GradCheckReport report;
        report.h = opt.h;
        report.tolerance = opt.tolerance;
        std::mt19937_64 rng(opt.seed);
        NoGradScope<T> no_grad;
        auto eval = [&]() { return static_cast<double>(loss_fn().item()); };

        for (std::size_t p = 0; p < tensors.size(); ++p) {
            auto& [name, t] = tensors[p];
            std::vector<std::size_t> coords(t.size());
            for (std::size_t i = 0; i < coords.size(); ++i)
                coords[i] = i;
            if (opt.max_coords != 0 && total > opt.max_coords) {
                const auto share = static_cast<std::size_t>(
                    std::llround(static_cast<double>(opt.max_coords) * static_cast<double>(t.size()) /
                                 static_cast<double>(total)));
                const std::size_t keep = std::min(t.size(), std::max<std::size_t>(share, 2));
                std::shuffle(coords.begin(), coords.end(), rng);
                coords.resize(keep);
                std::sort(coords.begin(), coords.end());
            }
            GradCheckEntry entry;
            entry.name = name;
            entry.coords_checked = coords.size();
            auto values = t.mutable_data();
            for (auto i : coords) {
                const T saved = values[i];
                values[i] = saved + static_cast<T>(opt.h);
                const double up = eval();
                values[i] = saved - static_cast<T>(opt.h);
                const double down = eval();
                values[i] = saved;
                const double numeric = (up - down) / (2.0 * opt.h);
                const double a = analytic[p][i];
                const double err = relative_error(a, numeric);
                if (err >= entry.max_rel_error) {
                    entry.max_rel_error = err;
                    entry.worst_index = i;
                    entry.analytic = a;
                    entry.numeric = numeric;
                }
            }
            if (!(entry.max_rel_error < opt.tolerance))
                report.passed = false;
            report.entries.push_back(entry);
        }
        return report;
    }
}

} // namespace agcn
