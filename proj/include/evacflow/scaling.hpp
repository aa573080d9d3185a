#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "evacflow/common.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Min-max scaling to [-1, 1]. Fitted on training data only; the fitted
// bounds travel with the model so evaluation uses the training-time mapping.
// ---------------------------------------------------------------------------

struct MinMaxScaler {
    double min = 0.0;
    double max = 1.0;
    bool fitted = false;

    static MinMaxScaler fit(const std::vector<double>& values) {
        require<DataError>(!values.empty(), "cannot fit a scaler on no values");
        MinMaxScaler s;
        s.min = values[0];
        s.max = values[0];
        for (double v : values) {
            require<NumericError>(std::isfinite(v), "non-finite value while fitting scaler");
            s.min = std::min(s.min, v);
            s.max = std::max(s.max, v);
        }
        s.fitted = true;
        return s;
    }

    /// x -> 2(x-min)/(max-min) - 1; a constant column maps to 0.
    double transform(double x) const {
        require<ContractError>(fitted, "scaler used before fitting");
        if (max == min) return 0.0;
        return 2.0 * (x - min) / (max - min) - 1.0;
    }

    /// x -> (x-min)/(max-min) into [0,1]; a constant column maps to 0. Used
    /// for feature columns, which feed rectified layers where a signed range
    /// would clip half the signal.
    double unit_transform(double x) const {
        require<ContractError>(fitted, "scaler used before fitting");
        if (max == min) return 0.0;
        return (x - min) / (max - min);
    }

    /// Inverse mapping, clamped at zero (flows cannot be negative).
    double invert(double y) const {
        require<ContractError>(fitted, "scaler used before fitting");
        const double x = (y + 1.0) * 0.5 * (max - min) + min;
        return std::max(0.0, x);
    }
};

/// Independent min-max scaler per feature column.
struct ColumnScaler {
    std::vector<MinMaxScaler> columns;

    bool fitted() const { return !columns.empty(); }
    int width() const { return static_cast<int>(columns.size()); }

    /// rows: flattened row-major (n_rows x n_cols) feature values.
    static ColumnScaler fit(const std::vector<double>& rows, int n_cols) {
        require<ContractError>(n_cols > 0, "column scaler needs at least one column");
        require<DataError>(!rows.empty() && rows.size() % static_cast<std::size_t>(n_cols) == 0,
                           "feature buffer does not divide into rows of " +
                               std::to_string(n_cols));
        ColumnScaler cs;
        cs.columns.resize(static_cast<std::size_t>(n_cols));
        const std::size_t n_rows = rows.size() / static_cast<std::size_t>(n_cols);
        for (int c = 0; c < n_cols; ++c) {
            double lo = rows[c], hi = rows[c];
            for (std::size_t r = 0; r < n_rows; ++r) {
                const double v = rows[r * static_cast<std::size_t>(n_cols) + c];
                require<NumericError>(std::isfinite(v),
                                      "non-finite value while fitting column scaler");
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            cs.columns[c].min = lo;
            cs.columns[c].max = hi;
            cs.columns[c].fitted = true;
        }
        return cs;
    }

    void transform_rows(std::vector<double>& rows) const {
        require<ContractError>(fitted(), "column scaler used before fitting");
        const int n_cols = width();
        require<DataError>(rows.size() % static_cast<std::size_t>(n_cols) == 0,
                           "feature buffer does not divide into rows of " +
                               std::to_string(n_cols));
        for (std::size_t i = 0; i < rows.size(); ++i)
            rows[i] = columns[i % static_cast<std::size_t>(n_cols)].unit_transform(rows[i]);
    }
};

}  // namespace evacflow
