#ifndef MLDR_MODEL_HPP
#define MLDR_MODEL_HPP

#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mldr/fusion.hpp"
#include "mldr/gradcheck.hpp"
#include "mldr/layers.hpp"
#include "mldr/tensor.hpp"

// Network assembly: the multi-level trunk with a classification branch per
// stage and a fusion head, plus three single-path baseline architectures.

namespace mldr {

enum class Arch { mldrnet, alexnet_like, acnn, tcnn };

inline const char* to_string(Arch a) {
    switch (a) {
        case Arch::mldrnet: return "mldrnet";
        case Arch::alexnet_like: return "alexnet_like";
        case Arch::acnn: return "acnn";
        case Arch::tcnn: return "tcnn";
    }
    return "?";
}

inline Arch arch_from_string(const std::string& s) {
    if (s == "mldrnet") return Arch::mldrnet;
    if (s == "alexnet_like") return Arch::alexnet_like;
    if (s == "acnn") return Arch::acnn;
    if (s == "tcnn") return Arch::tcnn;
    throw std::invalid_argument("unknown arch '" + s +
                                "' (expected mldrnet|alexnet_like|acnn|tcnn)");
}

/// Inputs of at least this edge length get the large-input conv1 stride (4);
/// smaller inputs use stride 2 so early feature maps keep enough resolution.
inline constexpr int kLargeInputThreshold = 224;

/// Baseline channel/FC widths are divided by this factor below the threshold.
inline constexpr int kDeskWidthDivisor = 8;

struct ModelConfig {
    Arch arch = Arch::mldrnet;
    int depth = 4;  // conv stages == branch count (mldrnet only)
    FusionKind fusion = FusionKind::mean;
    int n_classes = 8;
    int input_size = 64;
    std::vector<int> trunk_channels = {16, 32, 32, 32};
    int branch_hidden = 128;
    int reduce_channels = 128;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (arch == Arch::mldrnet) {
            if (depth < 2 || depth > 6)
                throw std::invalid_argument("model: depth must be in 2..6, got " +
                                            std::to_string(depth));
            if (trunk_channels.size() != static_cast<std::size_t>(depth))
                throw std::invalid_argument("model: trunk_channels has " +
                                            std::to_string(trunk_channels.size()) +
                                            " entries for depth " + std::to_string(depth));
        }
        for (int c : trunk_channels)
            if (c <= 0) throw std::invalid_argument("model: trunk channel counts must be positive");
        if (n_classes < 2) throw std::invalid_argument("model: n_classes must be >= 2");
        if (input_size < 1) throw std::invalid_argument("model: input_size must be positive");
        if (branch_hidden <= 0 || reduce_channels <= 0)
            throw std::invalid_argument("model: branch widths must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw std::invalid_argument("model: dropout_rate must be in [0,1)");
    }

    /// Workstation-sized default: 64x64 inputs, narrow trunk.
    static ModelConfig desk_default() { return ModelConfig{}; }

    /// Full-size preset: 375x375 crops, wide trunk. Kept for fidelity;
    /// training it is out of desk-scale budgets.
    static ModelConfig paper_scale() {
        ModelConfig c;
        c.input_size = 375;
        c.trunk_channels = {96, 256, 384, 384};
        return c;
    }

    /// Tiny shapes for finite-difference checking: 2*param_count forward
    /// passes must finish in seconds.
    static ModelConfig gradcheck_preset() {
        ModelConfig c;
        c.input_size = 16;
        c.trunk_channels = {2, 3, 3, 3};
        c.reduce_channels = 3;
        c.branch_hidden = 4;
        return c;
    }

    int stage1_stride() const { return input_size >= kLargeInputThreshold ? 4 : 2; }
};

struct ForwardResult {
    std::vector<Tensor> branch_logits;  // one [N,n] tensor per branch
    Tensor fused_logits;                // [N,n]
};

struct StageTrace {
    int stage = 0;
    int channels = 0;
    std::size_t conv_out = 0;
    std::size_t pool_out = 0;
    bool pooled = false;
};

class Model {
public:
    explicit Model(const ModelConfig& config) : config_(config), fusion_(config.fusion),
                                                dropout_rng_(Rng::mix(config.seed, 0x9d0c7)) {
        config_.validate();
        switch (config_.arch) {
            case Arch::mldrnet: build_mldrnet(); break;
            case Arch::alexnet_like: build_alexnet_like(); break;
            case Arch::acnn: build_acnn(); break;
            case Arch::tcnn: build_tcnn(); break;
        }
        Rng init_rng(config_.seed);
        for (Layer* l : layer_order_) l->init_params(init_rng);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    std::size_t branch_count() const { return branches_.size(); }

    void set_training(bool t) {
        training_ = t;
        for (Layer* l : layer_order_) l->set_training(t);
    }
    bool training() const { return training_; }

    /// Rng consumed by dropout layers in training mode; the trainer reseeds
    /// it per epoch so interrupted runs resume identically.
    Rng& dropout_rng() { return dropout_rng_; }

    ForwardResult forward(const Tensor& images) {
        const std::size_t s = static_cast<std::size_t>(config_.input_size);
        if (images.rank() != 4 || images.extent(1) != 3 || images.extent(2) != s ||
            images.extent(3) != s)
            throw std::invalid_argument("model: expected images [N,3," + std::to_string(s) + "," +
                                        std::to_string(s) + "], got " + images.shape_str());
        ForwardResult result;
        Tensor x = images;
        if (config_.arch == Arch::mldrnet) {
            result.branch_logits.reserve(branches_.size());
            for (std::size_t i = 0; i < trunk_.size(); ++i) {
                for (auto& l : trunk_[i]) x = l->forward(x);
                Tensor b = x;
                for (auto& l : branches_[i]) b = l->forward(b);
                result.branch_logits.push_back(std::move(b));
            }
            Tensor fused = fusion_.fuse(result.branch_logits);
            if (concat_head_) fused = concat_head_->forward(fused);
            result.fused_logits = std::move(fused);
        } else {
            for (auto& seq : trunk_)
                for (auto& l : seq) x = l->forward(x);
            for (auto& l : classifier_) x = l->forward(x);
            result.branch_logits.push_back(x);
            result.fused_logits = std::move(x);
        }
        has_forward_ = true;
        return result;
    }

    /// Populates every parameter gradient and returns d(loss)/d(images).
    /// Trunk stage t accumulates contributions from its own branch and from
    /// all deeper branches flowing back through the trunk.
    Tensor backward(const Tensor& grad_logits) {
        if (!has_forward_) throw std::logic_error("model: backward before forward");
        if (config_.arch == Arch::mldrnet) {
            Tensor g = grad_logits;
            if (concat_head_) g = concat_head_->backward(g);
            std::vector<Tensor> branch_grads = fusion_.backward(g);
            Tensor carry;  // gradient w.r.t. the deeper stage's input
            for (std::size_t i = trunk_.size(); i-- > 0;) {
                Tensor gb = std::move(branch_grads[i]);
                for (std::size_t j = branches_[i].size(); j-- > 0;)
                    gb = branches_[i][j]->backward(gb);
                if (i + 1 < trunk_.size())
                    gb = elementwise(EwKind::add, gb, carry);
                for (std::size_t j = trunk_[i].size(); j-- > 0;) gb = trunk_[i][j]->backward(gb);
                carry = std::move(gb);
            }
            return carry;
        }
        Tensor g = grad_logits;
        for (std::size_t j = classifier_.size(); j-- > 0;) g = classifier_[j]->backward(g);
        for (std::size_t i = trunk_.size(); i-- > 0;)
            for (std::size_t j = trunk_[i].size(); j-- > 0;) g = trunk_[i][j]->backward(g);
        return g;
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> all;
        for (Layer* l : layer_order_)
            for (auto& p : l->params()) all.push_back(p);
        return all;
    }

    std::size_t param_count() {
        std::size_t total = 0;
        for (auto& p : params()) total += p.value->size();
        return total;
    }

    void zero_grads() {
        for (Layer* l : layer_order_) l->zero_grads();
    }

    /// Smallest distance to a ReLU/max-pool/min-max-fusion switching point
    /// observed during the last forward.
    double kink_margin() const {
        double m = fusion_.kink_margin();
        for (const Layer* l : layer_order_) m = std::min(m, l->kink_margin());
        return m;
    }

    void set_dropout_frozen(bool frozen) {
        for (Layer* l : layer_order_)
            if (auto* d = dynamic_cast<DropoutLayer*>(l)) d->set_freeze_mask(frozen);
    }

    const std::vector<StageTrace>& shape_trace() const { return trace_; }

    std::string shape_trace_string() const {
        std::ostringstream os;
        os << "stage  channels  conv_out  pool_out\n";
        for (const auto& t : trace_) {
            os << "  " << t.stage << "      " << t.channels << "        " << t.conv_out << "x"
               << t.conv_out << "     ";
            if (t.pooled)
                os << t.pool_out << "x" << t.pool_out;
            else
                os << "(no pool)";
            os << "\n";
        }
        return os.str();
    }

private:
    // stage = conv -> relu -> max-pool 2/2; the pool is skipped once the
    // spatial extent reaches 1 so deeper configurations still build.
    std::size_t add_stage(int stage_idx, std::size_t in_ch, std::size_t out_ch,
                          std::size_t kernel, int stride, int pad, std::size_t spatial,
                          int pool_kernel, int pool_stride) {
        if (kernel > spatial + 2 * static_cast<std::size_t>(pad))
            throw_underflow(stage_idx, kernel, pad, spatial);
        const std::size_t conv_out = conv_out_extent(spatial, kernel, stride, pad);
        StageTrace t;
        t.stage = stage_idx;
        t.channels = static_cast<int>(out_ch);
        t.conv_out = conv_out;

        std::vector<std::unique_ptr<Layer>> seq;
        auto conv = std::make_unique<Conv2dLayer>(in_ch, out_ch, kernel, stride, pad);
        conv->set_name("trunk" + std::to_string(stage_idx) + ".conv");
        seq.push_back(std::move(conv));
        seq.push_back(std::make_unique<ReluLayer>());

        std::size_t out_spatial = conv_out;
        if (conv_out >= static_cast<std::size_t>(pool_kernel)) {
            seq.push_back(std::make_unique<MaxPoolLayer>(pool_kernel, pool_stride));
            out_spatial = (conv_out - static_cast<std::size_t>(pool_kernel)) /
                              static_cast<std::size_t>(pool_stride) +
                          1;
            t.pooled = true;
            t.pool_out = out_spatial;
        } else {
            t.pooled = false;
            t.pool_out = conv_out;
        }
        trace_.push_back(t);
        trunk_.push_back(std::move(seq));
        return out_spatial;
    }

    void add_branch(int stage_idx, std::size_t in_ch, std::size_t spatial) {
        std::vector<std::unique_ptr<Layer>> seq;
        const std::string prefix = "branch" + std::to_string(stage_idx);
        auto reduce = std::make_unique<Conv2dLayer>(in_ch, config_.reduce_channels, 1, 1, 0);
        reduce->set_name(prefix + ".reduce");
        seq.push_back(std::move(reduce));
        seq.push_back(std::make_unique<ReluLayer>());
        seq.push_back(std::make_unique<AvgPoolLayer>(static_cast<int>(spatial),
                                                     static_cast<int>(spatial)));
        seq.push_back(std::make_unique<FlattenLayer>());
        auto fc1 = std::make_unique<LinearLayer>(config_.reduce_channels, config_.branch_hidden);
        fc1->set_name(prefix + ".fc1");
        seq.push_back(std::move(fc1));
        seq.push_back(std::make_unique<ReluLayer>());
        if (config_.dropout_rate > 0.0)
            seq.push_back(std::make_unique<DropoutLayer>(config_.dropout_rate, &dropout_rng_));
        auto fc2 = std::make_unique<LinearLayer>(config_.branch_hidden, config_.n_classes);
        fc2->set_name(prefix + ".fc2");
        seq.push_back(std::move(fc2));
        branches_.push_back(std::move(seq));
    }

    void build_mldrnet() {
        std::size_t spatial = static_cast<std::size_t>(config_.input_size);
        std::size_t in_ch = 3;
        for (int i = 0; i < config_.depth; ++i) {
            const std::size_t kernel = (i == 0) ? 11 : 5;
            const int stride = (i == 0) ? config_.stage1_stride() : 1;
            const int pad = 2;
            const std::size_t out_ch = static_cast<std::size_t>(config_.trunk_channels[i]);
            spatial = add_stage(i + 1, in_ch, out_ch, kernel, stride, pad, spatial, 2, 2);
            add_branch(i + 1, out_ch, spatial);
            in_ch = out_ch;
        }
        if (config_.fusion == FusionKind::concat) {
            concat_head_ = std::make_unique<LinearLayer>(
                static_cast<std::size_t>(config_.depth) * config_.n_classes, config_.n_classes);
            concat_head_->set_name("concat_head");
        }
        collect_layers();
    }

    int scale_width(int paper_width) const {
        if (config_.input_size >= kLargeInputThreshold) return paper_width;
        return std::max(1, paper_width / kDeskWidthDivisor);
    }

    void add_fc(const std::string& name, std::size_t in, std::size_t out, bool relu_after,
                bool dropout_before) {
        if (dropout_before && config_.dropout_rate > 0.0)
            classifier_.push_back(std::make_unique<DropoutLayer>(config_.dropout_rate, &dropout_rng_));
        auto fc = std::make_unique<LinearLayer>(in, out);
        fc->set_name(name);
        classifier_.push_back(std::move(fc));
        if (relu_after) classifier_.push_back(std::make_unique<ReluLayer>());
    }

    void build_alexnet_like() {
        // five conv stages, pools after 1, 2 and 5, then fc 4096/4096/n
        const int ch[5] = {scale_width(96), scale_width(256), scale_width(384), scale_width(384),
                           scale_width(256)};
        std::size_t spatial = static_cast<std::size_t>(config_.input_size);
        std::size_t in_ch = 3;
        const struct {
            std::size_t kernel;
            int pad;
            bool pool;
        } plan[5] = {{11, 2, true}, {5, 2, true}, {3, 1, false}, {3, 1, false}, {3, 1, true}};
        for (int i = 0; i < 5; ++i) {
            const int stride = (i == 0) ? config_.stage1_stride() : 1;
            if (plan[i].pool) {
                spatial = add_stage(i + 1, in_ch, ch[i], plan[i].kernel, stride, plan[i].pad,
                                    spatial, 2, 2);
            } else {
                // conv+relu only
                if (plan[i].kernel > spatial + 2 * static_cast<std::size_t>(plan[i].pad))
                    throw_underflow(i + 1, plan[i].kernel, plan[i].pad, spatial);
                std::vector<std::unique_ptr<Layer>> seq;
                auto conv = std::make_unique<Conv2dLayer>(in_ch, ch[i], plan[i].kernel, stride,
                                                          plan[i].pad);
                conv->set_name("trunk" + std::to_string(i + 1) + ".conv");
                seq.push_back(std::move(conv));
                seq.push_back(std::make_unique<ReluLayer>());
                spatial = conv_out_extent(spatial, plan[i].kernel, stride, plan[i].pad);
                trace_.push_back({i + 1, ch[i], spatial, spatial, false});
                trunk_.push_back(std::move(seq));
            }
            in_ch = static_cast<std::size_t>(ch[i]);
        }
        classifier_.push_back(std::make_unique<FlattenLayer>());
        const std::size_t flat = in_ch * spatial * spatial;
        const std::size_t fc_w = static_cast<std::size_t>(scale_width(4096));
        add_fc("fc1", flat, fc_w, true, true);
        add_fc("fc2", fc_w, fc_w, true, true);
        add_fc("fc3", fc_w, static_cast<std::size_t>(config_.n_classes), false, false);
        collect_layers();
    }

    void build_acnn() {
        // four conv layers (pools after the first two), fc 1000/256/n
        const int ch = scale_width(64);
        std::size_t spatial = static_cast<std::size_t>(config_.input_size);
        std::size_t in_ch = 3;
        for (int i = 0; i < 4; ++i) {
            const std::size_t kernel = (i == 0) ? 11 : (i == 1 ? 5 : 3);
            const int pad = (i == 0 || i == 1) ? 2 : 1;
            const int stride = (i == 0) ? config_.stage1_stride() : 1;
            if (i < 2) {
                spatial = add_stage(i + 1, in_ch, ch, kernel, stride, pad, spatial, 2, 2);
            } else {
                if (kernel > spatial + 2 * static_cast<std::size_t>(pad))
                    throw_underflow(i + 1, kernel, pad, spatial);
                std::vector<std::unique_ptr<Layer>> seq;
                auto conv = std::make_unique<Conv2dLayer>(in_ch, ch, kernel, stride, pad);
                conv->set_name("trunk" + std::to_string(i + 1) + ".conv");
                seq.push_back(std::move(conv));
                seq.push_back(std::make_unique<ReluLayer>());
                spatial = conv_out_extent(spatial, kernel, stride, pad);
                trace_.push_back({i + 1, ch, spatial, spatial, false});
                trunk_.push_back(std::move(seq));
            }
            in_ch = static_cast<std::size_t>(ch);
        }
        classifier_.push_back(std::make_unique<FlattenLayer>());
        add_fc("fc1", in_ch * spatial * spatial, static_cast<std::size_t>(scale_width(1000)), true,
               true);
        add_fc("fc2", static_cast<std::size_t>(scale_width(1000)),
               static_cast<std::size_t>(scale_width(256)), true, true);
        add_fc("fc3", static_cast<std::size_t>(scale_width(256)),
               static_cast<std::size_t>(config_.n_classes), false, false);
        collect_layers();
    }

    void build_tcnn() {
        // two conv stages, an energy layer (global average pooling), fc 4096/4096/n
        const int ch1 = scale_width(96), ch2 = scale_width(256);
        std::size_t spatial = static_cast<std::size_t>(config_.input_size);
        spatial = add_stage(1, 3, ch1, 11, config_.stage1_stride(), 2, spatial, 2, 2);
        {
            if (5 > spatial + 4) throw_underflow(2, 5, 2, spatial);
            std::vector<std::unique_ptr<Layer>> seq;
            auto conv = std::make_unique<Conv2dLayer>(ch1, ch2, 5, 1, 2);
            conv->set_name("trunk2.conv");
            seq.push_back(std::move(conv));
            seq.push_back(std::make_unique<ReluLayer>());
            spatial = conv_out_extent(spatial, 5, 1, 2);
            trace_.push_back({2, ch2, spatial, spatial, false});
            trunk_.push_back(std::move(seq));
        }
        // energy layer
        classifier_.push_back(std::make_unique<AvgPoolLayer>(static_cast<int>(spatial),
                                                             static_cast<int>(spatial)));
        classifier_.push_back(std::make_unique<FlattenLayer>());
        const std::size_t fc_w = static_cast<std::size_t>(scale_width(4096));
        add_fc("fc1", static_cast<std::size_t>(ch2), fc_w, true, true);
        add_fc("fc2", fc_w, fc_w, true, true);
        add_fc("fc3", fc_w, static_cast<std::size_t>(config_.n_classes), false, false);
        collect_layers();
    }

    [[noreturn]] void throw_underflow(int stage, std::size_t kernel, int pad,
                                      std::size_t spatial) {
        std::ostringstream os;
        os << "model: spatial underflow at stage " << stage << " (kernel " << kernel << ", pad "
           << pad << ", incoming extent " << spatial << ") for input_size " << config_.input_size
           << "; per-stage extents so far:";
        for (const auto& t : trace_)
            os << " stage" << t.stage << "=" << t.conv_out << "->" << t.pool_out;
        throw std::invalid_argument(os.str());
    }

    void collect_layers() {
        layer_order_.clear();
        for (std::size_t i = 0; i < trunk_.size(); ++i) {
            for (auto& l : trunk_[i]) layer_order_.push_back(l.get());
            if (i < branches_.size())
                for (auto& l : branches_[i]) layer_order_.push_back(l.get());
        }
        if (concat_head_) layer_order_.push_back(concat_head_.get());
        for (auto& l : classifier_) layer_order_.push_back(l.get());
    }

    ModelConfig config_;
    std::vector<std::vector<std::unique_ptr<Layer>>> trunk_;
    std::vector<std::vector<std::unique_ptr<Layer>>> branches_;
    FusionState fusion_;
    std::unique_ptr<LinearLayer> concat_head_;
    std::vector<std::unique_ptr<Layer>> classifier_;
    std::vector<Layer*> layer_order_;
    std::vector<StageTrace> trace_;
    Rng dropout_rng_;
    bool training_ = false;
    bool has_forward_ = false;
};

/// End-to-end finite-difference check through softmax cross-entropy.
/// Images are resampled while any activation sits within 10*epsilon of a
/// switching point.
inline GradCheckResult grad_check_model(Model& model, Tensor images,
                                        const std::vector<int>& labels, Rng& rng,
                                        double epsilon = 1e-5) {
    gradcheck_validate_epsilon(epsilon);
    model.set_training(false);
    const double margin = 10.0 * epsilon;
    for (int attempt = 0;; ++attempt) {
        model.forward(images);
        if (model.kink_margin() > margin) break;
        if (attempt >= 200)
            throw std::runtime_error("grad_check: could not sample images clear of kinks");
        for (auto& v : images.values()) v = rng.uniform(0.0, 1.0);
    }

    const auto loss = [&]() {
        ForwardResult r = model.forward(images);
        return softmax_cross_entropy(r.fused_logits, labels).loss;
    };

    model.zero_grads();
    ForwardResult r = model.forward(images);
    LossOutput lo = softmax_cross_entropy(r.fused_logits, labels);
    Tensor input_grad = model.backward(lo.grad_logits);

    std::vector<ParamRef> probes = model.params();
    std::vector<Tensor> analytic;
    analytic.reserve(probes.size() + 1);
    for (auto& p : probes) analytic.push_back(*p.grad);
    Tensor input_grad_copy = input_grad;
    probes.push_back({"images", &images, &input_grad});
    analytic.push_back(input_grad_copy);

    return grad_check_probe(loss, probes, analytic, epsilon);
}

}  // namespace mldr

#endif  // MLDR_MODEL_HPP
