#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "evacflow/adam.hpp"
#include "evacflow/common.hpp"
#include "evacflow/ops.hpp"
#include "evacflow/tensor.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Finite-difference gradient checker. The loss function must be deterministic
// and must read parameter values through the shared tensor storage so that
// probe perturbations are visible to it.
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    double tol = 0.0;

    bool passed() const { return max_rel_err <= tol; }

    const GradCheckEntry& worst() const {
        require<ContractError>(!entries.empty(), "gradcheck report is empty");
        std::size_t w = 0;
        for (std::size_t i = 1; i < entries.size(); ++i)
            if (entries[i].max_rel_err > entries[w].max_rel_err) w = i;
        return entries[w];
    }
};

/// Compares analytic gradients against central differences for every element
/// of every parameter. Relative error uses denominator max(1, |a|, |n|) so
/// near-zero gradients are judged on absolute terms.
inline GradCheckReport gradcheck(const std::function<Tensor()>& loss_fn,
                                 ParamSet& params, double h = 1e-5,
                                 double tol = 1e-4) {
    require<ContractError>(h > 0.0, "gradcheck: step h must be positive");
    for (auto& p : params)
        require<NumericError>(all_finite(p.value.values()),
                              "gradcheck: parameter '" + p.name + "' is not finite");

    auto eval = [&loss_fn]() {
        NoRecordScope quiet;
        Tensor out = loss_fn();
        require<ContractError>(out.numel() == 1,
                               "gradcheck: loss must be scalar, got " +
                                   shape_string(out.shape()));
        return out.item();
    };

    const double base1 = eval();
    const double base2 = eval();
    require<NumericError>(std::memcmp(&base1, &base2, sizeof(double)) == 0,
                          "gradcheck: loss is not deterministic across evaluations");

    zero_grads(params);
    ComputationRecord record;
    Tensor loss;
    {
        RecordingScope scope(record);
        loss = loss_fn();
    }
    require<ContractError>(loss.numel() == 1,
                           "gradcheck: loss must be scalar, got " +
                               shape_string(loss.shape()));
    if (!record.empty() && loss.requires_grad()) record.backward(loss);

    GradCheckReport report;
    report.tol = tol;
    for (auto& p : params) {
        GradCheckEntry entry;
        entry.name = p.name;
        auto& w = p.value.values();
        const std::vector<double> analytic =
            p.value.has_grad() ? p.value.grad() : std::vector<double>(w.size(), 0.0);
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double orig = w[j];
            w[j] = orig + h;
            const double fp = eval();
            w[j] = orig - h;
            const double fm = eval();
            w[j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[j];
            const double abs_err = std::fabs(a - numeric);
            const double rel_err =
                abs_err / std::max({1.0, std::fabs(a), std::fabs(numeric)});
            if (rel_err > entry.max_rel_err) {
                entry.max_rel_err = rel_err;
                entry.max_abs_err = abs_err;
                entry.worst_index = j;
                entry.analytic_at_worst = a;
                entry.numeric_at_worst = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace evacflow
