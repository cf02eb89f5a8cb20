#ifndef MLDR_LAYERS_HPP
#define MLDR_LAYERS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mldr/kernels.hpp"
#include "mldr/tensor.hpp"

// Differentiable layers with explicit forward/backward maps. Layers cache
// whatever the backward pass needs, accumulate parameter gradients, and never
// apply updates themselves.

namespace mldr {

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual const char* kind() const = 0;

    /// Deterministic in eval mode; training mode may consult the layer's rng
    /// (dropout). Caches the input for backward.
    virtual Tensor forward(const Tensor& input) = 0;

    /// Returns d(loss)/d(input); accumulates d(loss)/d(params) into the param
    /// grads. Requires a prior forward.
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual std::vector<ParamRef> params() { return {}; }

    virtual void init_params(Rng&) {}

    void zero_grads() {
        for (auto& p : params()) p.grad->fill(0.0);
    }

    virtual void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }

    void set_name(std::string n) { name_ = std::move(n); }
    const std::string& name() const { return name_; }

    /// Distance of the closest cached value to a derivative discontinuity in
    /// the last forward (ReLU zero crossings, max-pool window ties). Smooth
    /// layers report +inf. Gradient checking resamples inputs when this is
    /// too small.
    virtual double kink_margin() const { return std::numeric_limits<double>::infinity(); }

protected:
    void require_cache() const {
        if (!has_cache_)
            throw std::logic_error(name_.empty() ? std::string(kind()) + ": backward before forward"
                                                 : name_ + ": backward before forward");
    }

    [[noreturn]] void shape_error(const std::string& what) const {
        throw std::invalid_argument((name_.empty() ? std::string(kind()) : name_) + ": " + what);
    }

    bool training_ = false;
    bool has_cache_ = false;
    std::string name_;
};

// ---------------------------------------------------------------------------

class Conv2dLayer : public Layer {
public:
    Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, int stride,
                int pad)
        : in_channels_(in_channels),
          out_channels_(out_channels),
          kernel_(kernel),
          stride_(stride),
          pad_(pad),
          weight_({out_channels, in_channels, kernel, kernel}),
          bias_({out_channels}),
          weight_grad_({out_channels, in_channels, kernel, kernel}),
          bias_grad_({out_channels}) {
        if (stride <= 0) throw std::invalid_argument("conv: stride must be positive");
        if (pad < 0) throw std::invalid_argument("conv: pad must be non-negative");
    }

    const char* kind() const override { return "conv"; }

    Tensor forward(const Tensor& input) override {
        if (input.rank() != 4 || input.extent(1) != in_channels_)
            shape_error("expected [N," + std::to_string(in_channels_) + ",H,W], got " +
                        input.shape_str());
        cached_input_ = input;
        has_cache_ = true;
        return conv2d(input, weight_, bias_, stride_, pad_);
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        const Tensor& in = cached_input_;
        const std::size_t n_batch = in.extent(0), channels = in.extent(1);
        const std::size_t height = in.extent(2), width = in.extent(3);
        const std::size_t oh = conv_out_extent(height, kernel_, stride_, pad_);
        const std::size_t ow = conv_out_extent(width, kernel_, stride_, pad_);
        if (grad_out.shape() !=
            std::vector<std::size_t>{n_batch, out_channels_, oh, ow})
            shape_error("grad shape " + grad_out.shape_str() + " does not match forward output");

        Tensor grad_in(in.shape());
        const long p = pad_;
        const std::size_t s = static_cast<std::size_t>(stride_);

        for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t f = 0; f < out_channels_; ++f) {
                const double* gplane = grad_out.data() + (n * out_channels_ + f) * oh * ow;
                // bias gradient
                double bsum = 0.0;
                for (std::size_t i = 0; i < oh * ow; ++i) bsum += gplane[i];
                bias_grad_[f] += bsum;
                for (std::size_t c = 0; c < channels; ++c) {
                    const double* iplane = in.data() + (n * channels + c) * height * width;
                    double* dplane = grad_in.data() + (n * channels + c) * height * width;
                    const double* kplane = weight_.data() + (f * channels + c) * kernel_ * kernel_;
                    double* kgrad = weight_grad_.data() + (f * channels + c) * kernel_ * kernel_;
                    for (std::size_t ky = 0; ky < kernel_; ++ky) {
                        for (std::size_t kx = 0; kx < kernel_; ++kx) {
                            const double kv = kplane[ky * kernel_ + kx];
                            double wsum = 0.0;
                            for (std::size_t y = 0; y < oh; ++y) {
                                const long iy = static_cast<long>(y * s) - p + static_cast<long>(ky);
                                if (iy < 0 || iy >= static_cast<long>(height)) continue;
                                const double* irow = iplane + static_cast<std::size_t>(iy) * width;
                                double* drow = dplane + static_cast<std::size_t>(iy) * width;
                                const double* grow = gplane + y * ow;
                                for (std::size_t x = 0; x < ow; ++x) {
                                    const long ix =
                                        static_cast<long>(x * s) - p + static_cast<long>(kx);
                                    if (ix < 0 || ix >= static_cast<long>(width)) continue;
                                    const double g = grow[x];
                                    drow[static_cast<std::size_t>(ix)] += kv * g;
                                    wsum += irow[static_cast<std::size_t>(ix)] * g;
                                }
                            }
                            kgrad[ky * kernel_ + kx] += wsum;
                        }
                    }
                }
            }
        }
        return grad_in;
    }

    std::vector<ParamRef> params() override {
        return {{name_ + ".weight", &weight_, &weight_grad_},
                {name_ + ".bias", &bias_, &bias_grad_}};
    }

    void init_params(Rng& rng) override {
        const double bound = std::sqrt(6.0 / static_cast<double>(in_channels_ * kernel_ * kernel_));
        for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = rng.uniform(-bound, bound);
        bias_.fill(0.0);
    }

    std::size_t out_channels() const { return out_channels_; }
    int stride() const { return stride_; }
    int pad() const { return pad_; }
    std::size_t kernel() const { return kernel_; }
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    std::size_t in_channels_, out_channels_, kernel_;
    int stride_, pad_;
    Tensor weight_, bias_, weight_grad_, bias_grad_;
    Tensor cached_input_;
};

// ---------------------------------------------------------------------------

class ReluLayer : public Layer {
public:
    const char* kind() const override { return "relu"; }

    Tensor forward(const Tensor& input) override {
        cached_input_ = input;
        has_cache_ = true;
        Tensor out(input.shape());
        for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
        return out;
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        if (!grad_out.same_shape(cached_input_))
            shape_error("grad shape " + grad_out.shape_str() + " vs input " +
                        cached_input_.shape_str());
        Tensor grad_in(grad_out.shape());
        // gate passes where input > 0; exactly 0 blocks
        for (std::size_t i = 0; i < grad_out.size(); ++i)
            grad_in[i] = cached_input_[i] > 0.0 ? grad_out[i] : 0.0;
        return grad_in;
    }

    double kink_margin() const override {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cached_input_.size(); ++i)
            m = std::min(m, std::abs(cached_input_[i]));
        return m;
    }

private:
    Tensor cached_input_;
};

// ---------------------------------------------------------------------------

class MaxPoolLayer : public Layer {
public:
    MaxPoolLayer(int kernel, int stride) : kernel_(kernel), stride_(stride) {}

    const char* kind() const override { return "maxpool"; }

    Tensor forward(const Tensor& input) override {
        input_shape_ = input.shape();
        Tensor out = pool2d_argmax(input, kernel_, stride_, argmax_);
        // margin between winner and runner-up per window, for grad checking
        margin_ = std::numeric_limits<double>::infinity();
        if (kernel_ > 1) {
            const std::size_t k = static_cast<std::size_t>(kernel_);
            const std::size_t s = static_cast<std::size_t>(stride_);
            const std::size_t h = input.extent(2), w = input.extent(3);
            const std::size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
            for (std::size_t nc = 0; nc < input.extent(0) * input.extent(1); ++nc) {
                const double* plane = input.data() + nc * h * w;
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t x = 0; x < ow; ++x) {
                        double best = -std::numeric_limits<double>::infinity(), second = best;
                        for (std::size_t dy = 0; dy < k; ++dy)
                            for (std::size_t dx = 0; dx < k; ++dx) {
                                const double v = plane[(y * s + dy) * w + x * s + dx];
                                if (v > best) {
                                    second = best;
                                    best = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        margin_ = std::min(margin_, best - second);
                    }
            }
        }
        has_cache_ = true;
        return out;
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        if (grad_out.size() != argmax_.size())
            shape_error("grad shape " + grad_out.shape_str() + " does not match pooled output");
        Tensor grad_in(input_shape_);
        for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[argmax_[i]] += grad_out[i];
        return grad_in;
    }

    double kink_margin() const override { return margin_; }

private:
    int kernel_, stride_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> input_shape_;
    double margin_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------

class AvgPoolLayer : public Layer {
public:
    AvgPoolLayer(int kernel, int stride) : kernel_(kernel), stride_(stride) {}

    const char* kind() const override { return "avgpool"; }

    Tensor forward(const Tensor& input) override {
        input_shape_ = input.shape();
        has_cache_ = true;
        return pool2d(input, PoolKind::avg, kernel_, stride_);
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        const std::size_t n_batch = input_shape_[0], channels = input_shape_[1];
        const std::size_t h = input_shape_[2], w = input_shape_[3];
        const std::size_t k = static_cast<std::size_t>(kernel_);
        const std::size_t s = static_cast<std::size_t>(stride_);
        const std::size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
        if (grad_out.shape() != std::vector<std::size_t>{n_batch, channels, oh, ow})
            shape_error("grad shape " + grad_out.shape_str() + " does not match pooled output");
        Tensor grad_in(input_shape_);
        const double inv = 1.0 / static_cast<double>(k * k);
        for (std::size_t nc = 0; nc < n_batch * channels; ++nc) {
            const double* gplane = grad_out.data() + nc * oh * ow;
            double* dplane = grad_in.data() + nc * h * w;
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    const double g = gplane[y * ow + x] * inv;
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx)
                            dplane[(y * s + dy) * w + x * s + dx] += g;
                }
        }
        return grad_in;
    }

private:
    int kernel_, stride_;
    std::vector<std::size_t> input_shape_;
};

// ---------------------------------------------------------------------------

class FlattenLayer : public Layer {
public:
    const char* kind() const override { return "flatten"; }

    Tensor forward(const Tensor& input) override {
        if (input.rank() != 4) shape_error("expected 4-D input, got " + input.shape_str());
        input_shape_ = input.shape();
        has_cache_ = true;
        return Tensor::from({input.extent(0), input.size() / input.extent(0)}, input.values());
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        if (grad_out.size() != Tensor::numel(input_shape_))
            shape_error("grad shape " + grad_out.shape_str() + " does not match flattened input");
        return Tensor::from(input_shape_, grad_out.values());
    }

private:
    std::vector<std::size_t> input_shape_;
};

// ---------------------------------------------------------------------------

class LinearLayer : public Layer {
public:
    LinearLayer(std::size_t in_features, std::size_t out_features)
        : in_(in_features),
          out_(out_features),
          weight_({in_features, out_features}),
          bias_({out_features}),
          weight_grad_({in_features, out_features}),
          bias_grad_({out_features}) {}

    const char* kind() const override { return "linear"; }

    Tensor forward(const Tensor& input) override {
        if (input.rank() != 2 || input.extent(1) != in_)
            shape_error("expected [N," + std::to_string(in_) + "], got " + input.shape_str());
        cached_input_ = input;
        has_cache_ = true;
        Tensor out = matmul(input, weight_);
        for (std::size_t n = 0; n < out.extent(0); ++n)
            for (std::size_t j = 0; j < out_; ++j) out.at(n, j) += bias_[j];
        return out;
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        const std::size_t n_batch = cached_input_.extent(0);
        if (grad_out.shape() != std::vector<std::size_t>{n_batch, out_})
            shape_error("grad shape " + grad_out.shape_str() + " does not match output");
        // dW[i,j] += sum_n x[n,i] * g[n,j];  db[j] += sum_n g[n,j];  dx = g W^T
        for (std::size_t n = 0; n < n_batch; ++n) {
            const double* xrow = cached_input_.data() + n * in_;
            const double* grow = grad_out.data() + n * out_;
            for (std::size_t i = 0; i < in_; ++i) {
                double* wrow = weight_grad_.data() + i * out_;
                const double xv = xrow[i];
                for (std::size_t j = 0; j < out_; ++j) wrow[j] += xv * grow[j];
            }
            for (std::size_t j = 0; j < out_; ++j) bias_grad_[j] += grow[j];
        }
        Tensor grad_in({n_batch, in_});
        for (std::size_t n = 0; n < n_batch; ++n) {
            const double* grow = grad_out.data() + n * out_;
            double* drow = grad_in.data() + n * in_;
            for (std::size_t i = 0; i < in_; ++i) {
                const double* wrow = weight_.data() + i * out_;
                double acc = 0.0;
                for (std::size_t j = 0; j < out_; ++j) acc += grow[j] * wrow[j];
                drow[i] = acc;
            }
        }
        return grad_in;
    }

    std::vector<ParamRef> params() override {
        return {{name_ + ".weight", &weight_, &weight_grad_},
                {name_ + ".bias", &bias_, &bias_grad_}};
    }

    void init_params(Rng& rng) override {
        const double bound = std::sqrt(6.0 / static_cast<double>(in_));
        for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = rng.uniform(-bound, bound);
        bias_.fill(0.0);
    }

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    std::size_t in_, out_;
    Tensor weight_, bias_, weight_grad_, bias_grad_;
    Tensor cached_input_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: training mode zeroes activations with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode is the identity.
class DropoutLayer : public Layer {
public:
    DropoutLayer(double rate, Rng* rng) : rate_(rate), rng_(rng) {
        if (rate < 0.0 || rate >= 1.0)
            throw std::invalid_argument("dropout: rate must be in [0,1)");
    }

    const char* kind() const override { return "dropout"; }

    Tensor forward(const Tensor& input) override {
        has_cache_ = true;
        if (!training_ || rate_ == 0.0) {
            mask_ = Tensor(input.shape(), 1.0);
            return input;
        }
        if (freeze_mask_ && mask_.same_shape(input)) {
            return elementwise(EwKind::mul, input, mask_);
        }
        if (rng_ == nullptr) throw std::logic_error("dropout: training mode needs an rng");
        mask_ = Tensor(input.shape());
        const double keep_scale = 1.0 / (1.0 - rate_);
        for (std::size_t i = 0; i < mask_.size(); ++i)
            mask_[i] = (rng_->uniform() < rate_) ? 0.0 : keep_scale;
        return elementwise(EwKind::mul, input, mask_);
    }

    Tensor backward(const Tensor& grad_out) override {
        require_cache();
        if (!grad_out.same_shape(mask_))
            shape_error("grad shape " + grad_out.shape_str() + " vs mask " + mask_.shape_str());
        return elementwise(EwKind::mul, grad_out, mask_);
    }

    /// Keeps the current mask across forwards; used by gradient checking so
    /// repeated loss evaluations see one fixed function.
    void set_freeze_mask(bool freeze) { freeze_mask_ = freeze; }

    double rate() const { return rate_; }

private:
    double rate_;
    Rng* rng_;
    bool freeze_mask_ = false;
    Tensor mask_;
};

// ---------------------------------------------------------------------------

/// Softmax (with max-subtraction) fused with cross-entropy over a batch.
struct LossOutput {
    double loss = 0.0;          // mean over the batch of -log p[label]
    Tensor probs;               // [N,n], rows sum to 1
    Tensor grad_logits;         // (probs - onehot)/N
};

inline LossOutput softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be [N,n], got " +
                                    logits.shape_str());
    const std::size_t n_batch = logits.extent(0), n_classes = logits.extent(1);
    if (n_batch == 0 || labels.size() != n_batch)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(n_batch));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(l) +
                                        " out of range 0.." + std::to_string(n_classes - 1));

    LossOutput out;
    out.probs = Tensor({n_batch, n_classes});
    out.grad_logits = Tensor({n_batch, n_classes});
    double loss_sum = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
        const double* row = logits.data() + n * n_classes;
        double mx = row[0];
        for (std::size_t j = 1; j < n_classes; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n_classes; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        for (std::size_t j = 0; j < n_classes; ++j)
            out.probs.at(n, j) = std::exp(row[j] - mx) / denom;
        const std::size_t lab = static_cast<std::size_t>(labels[n]);
        loss_sum += -(row[lab] - mx - log_denom);
        for (std::size_t j = 0; j < n_classes; ++j) {
            double g = out.probs.at(n, j);
            if (j == lab) g -= 1.0;
            out.grad_logits.at(n, j) = g / static_cast<double>(n_batch);
        }
    }
    out.loss = loss_sum / static_cast<double>(n_batch);
    if (!std::isfinite(out.loss))
        throw std::runtime_error("softmax_cross_entropy: non-finite loss");
    return out;
}

}  // namespace mldr

#endif  // MLDR_LAYERS_HPP
