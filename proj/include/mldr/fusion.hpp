#ifndef MLDR_FUSION_HPP
#define MLDR_FUSION_HPP

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mldr/tensor.hpp"

// Fusion layer: aggregates k per-branch representations of identical shape
// into one representation via concat, min, max, or mean, with exact gradient
// routing back to the branches.

namespace mldr {

enum class FusionKind { concat, min, max, mean };

inline const char* to_string(FusionKind k) {
    switch (k) {
        case FusionKind::concat: return "concat";
        case FusionKind::min: return "min";
        case FusionKind::max: return "max";
        case FusionKind::mean: return "mean";
    }
    return "?";
}

inline FusionKind fusion_from_string(const std::string& s) {
    if (s == "concat") return FusionKind::concat;
    if (s == "min") return FusionKind::min;
    if (s == "max") return FusionKind::max;
    if (s == "mean") return FusionKind::mean;
    throw std::invalid_argument("unknown fusion kind '" + s +
                                "' (expected concat|min|max|mean)");
}

class FusionState {
public:
    explicit FusionState(FusionKind kind) : kind_(kind) {}

    FusionKind kind() const { return kind_; }
    std::size_t branch_count() const { return branch_count_; }
    const std::vector<std::size_t>& argselect() const { return argselect_; }

    /// Elementwise min/max/mean across branches, or concatenation along the
    /// feature axis (branch 0 first). Ties in min/max select the lowest
    /// branch index.
    Tensor fuse(const std::vector<Tensor>& inputs) {
        if (inputs.size() < 2)
            throw std::invalid_argument("fuse: needs at least 2 branches, got " +
                                        std::to_string(inputs.size()));
        for (std::size_t i = 1; i < inputs.size(); ++i) {
            if (!inputs[i].same_shape(inputs[0]))
                throw std::invalid_argument("fuse: branch " + std::to_string(i) + " shape " +
                                            inputs[i].shape_str() + " differs from branch 0 shape " +
                                            inputs[0].shape_str());
        }
        branch_count_ = inputs.size();
        input_shape_ = inputs[0].shape();
        argselect_.clear();
        margin_ = std::numeric_limits<double>::infinity();
        has_cache_ = true;

        const std::size_t k = branch_count_;
        const std::size_t n = inputs[0].size();

        if (kind_ == FusionKind::concat) {
            if (inputs[0].rank() != 2)
                throw std::invalid_argument("fuse: concat expects [N,d] branches, got " +
                                            inputs[0].shape_str());
            const std::size_t rows = inputs[0].extent(0), d = inputs[0].extent(1);
            Tensor out({rows, k * d});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t b = 0; b < k; ++b)
                    for (std::size_t j = 0; j < d; ++j) out.at(r, b * d + j) = inputs[b].at(r, j);
            return out;
        }

        Tensor out(input_shape_);
        if (kind_ == FusionKind::mean) {
            for (std::size_t i = 0; i < n; ++i) {
                double sum = 0.0;
                for (std::size_t b = 0; b < k; ++b) sum += inputs[b][i];
                out[i] = sum / static_cast<double>(k);
            }
            return out;
        }

        argselect_.assign(n, 0);
        const bool is_max = (kind_ == FusionKind::max);
        for (std::size_t i = 0; i < n; ++i) {
            double best = inputs[0][i];
            double gap = std::numeric_limits<double>::infinity();  // distance to runner-up
            std::size_t sel = 0;
            for (std::size_t b = 1; b < k; ++b) {
                const double v = inputs[b][i];
                const bool better = is_max ? (v > best) : (v < best);
                if (better) {
                    gap = std::abs(best - v);
                    best = v;
                    sel = b;
                } else {
                    gap = std::min(gap, std::abs(v - best));
                }
            }
            out[i] = best;
            argselect_[i] = sel;
            margin_ = std::min(margin_, gap);
        }
        return out;
    }

    /// mean: every branch receives grad/k, with the last branch absorbing the
    /// rounding residual so the branch gradients sum exactly to grad_out.
    /// min/max: the selected branch receives grad_out, others zero.
    /// concat: grad_out splits back into the k column blocks.
    std::vector<Tensor> backward(const Tensor& grad_out) const {
        if (!has_cache_) throw std::logic_error("fuse_backward: backward before fuse");
        const std::size_t k = branch_count_;

        if (kind_ == FusionKind::concat) {
            const std::size_t rows = input_shape_[0], d = input_shape_[1];
            if (grad_out.shape() != std::vector<std::size_t>{rows, k * d})
                throw std::invalid_argument("fuse_backward: grad shape " + grad_out.shape_str() +
                                            " does not match fused output");
            std::vector<Tensor> grads(k, Tensor(input_shape_));
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t b = 0; b < k; ++b)
                    for (std::size_t j = 0; j < d; ++j)
                        grads[b].at(r, j) = grad_out.at(r, b * d + j);
            return grads;
        }

        if (grad_out.shape() != input_shape_)
            throw std::invalid_argument("fuse_backward: grad shape " + grad_out.shape_str() +
                                        " does not match fused output " +
                                        Tensor::shape_string(input_shape_));

        std::vector<Tensor> grads(k, Tensor(input_shape_));
        const std::size_t n = grad_out.size();
        if (kind_ == FusionKind::mean) {
            for (std::size_t i = 0; i < n; ++i) {
                const double share = grad_out[i] / static_cast<double>(k);
                double partial = 0.0;
                for (std::size_t b = 0; b + 1 < k; ++b) {
                    grads[b][i] = share;
                    partial += share;
                }
                grads[k - 1][i] = grad_out[i] - partial;
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) grads[argselect_[i]][i] = grad_out[i];
        }
        return grads;
    }

    /// Smallest |selected - runner-up| seen in the last min/max fuse; +inf
    /// for mean/concat.
    double kink_margin() const { return margin_; }

private:
    FusionKind kind_;
    std::size_t branch_count_ = 0;
    std::vector<std::size_t> input_shape_;
    std::vector<std::size_t> argselect_;
    double margin_ = std::numeric_limits<double>::infinity();
    bool has_cache_ = false;
};

/// Stateless convenience wrapper for the forward-only case.
inline Tensor fuse(const std::vector<Tensor>& inputs, FusionKind kind) {
    FusionState state(kind);
    return state.fuse(inputs);
}

}  // namespace mldr

#endif  // MLDR_FUSION_HPP
