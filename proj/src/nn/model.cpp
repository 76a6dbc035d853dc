#include "pimforce/nn/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "pimforce/common.hpp"

namespace pimforce::nn {

namespace {

constexpr std::size_t kEmgHeight = kStftFrames;
constexpr std::size_t kEmgWidth = kStftBins;

void check_widths(const std::vector<std::size_t>& v, const char* what) {
    if (v.empty()) throw InvalidInput(std::string("model config: ") + what + " is empty");
    for (auto x : v)
        if (x == 0) throw InvalidInput(std::string("model config: ") + what + " has a zero entry");
}

}  // namespace

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.preset = "desk";
    c.emg_encoder = {8, 16, 32};
    c.emg_decoder = {32, 16, 1};
    c.resnet_channels = {8, 16, 32, 64};
    c.feature_dim = 64;
    c.fusion_width = 32;
    return c;
}

void ModelConfig::validate() const {
    check_widths(emg_encoder, "emg_encoder");
    check_widths(emg_pool, "emg_pool");
    check_widths(emg_decoder, "emg_decoder");
    check_widths(emg_upsample, "emg_upsample");
    check_widths(resnet_layers, "resnet_layers");
    check_widths(resnet_channels, "resnet_channels");
    if (emg_pool.size() != emg_encoder.size())
        throw InvalidInput("model config: emg_pool must have one entry per encoder block");
    if (emg_upsample.size() != emg_decoder.size())
        throw InvalidInput("model config: emg_upsample must have one entry per decoder block");
    if (resnet_layers.size() != resnet_channels.size())
        throw InvalidInput("model config: resnet_layers and resnet_channels differ in length");
    if (stem_kernel == 0 || stem_stride == 0 || feature_dim == 0 || fusion_width == 0)
        throw InvalidInput("model config: widths must be >= 1");
    if (emg_upsample_mode != "nearest" && emg_upsample_mode != "linear")
        throw InvalidInput("model config: emg_upsample_mode must be nearest or linear");
    if (regions != kNumRegions) throw InvalidInput("model config: regions must be 9");
    if (!(p_max > 0.0)) throw InvalidInput("model config: p_max must be positive");
    std::size_t h = kEmgHeight, w = kEmgWidth;
    for (auto p : emg_pool) {
        if (h % p || w % p) throw InvalidInput("model config: emg_pool does not divide the spectrogram");
        h /= p;
        w /= p;
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"preset", preset},
            {"emg_encoder", emg_encoder},
            {"emg_pool", emg_pool},
            {"emg_decoder", emg_decoder},
            {"emg_upsample", emg_upsample},
            {"emg_upsample_mode", emg_upsample_mode},
            {"resnet_layers", resnet_layers},
            {"resnet_channels", resnet_channels},
            {"stem_kernel", stem_kernel},
            {"stem_stride", stem_stride},
            {"stem_pool", stem_pool},
            {"feature_dim", feature_dim},
            {"fusion_width", fusion_width},
            {"conv_bias", conv_bias},
            {"regions", regions},
            {"p_max", p_max},
            {"bn_momentum", bn_momentum},
            {"bn_eps", bn_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    const std::string preset = j.value("preset", std::string("paper"));
    if (preset == "desk")
        c = desk();
    else if (preset != "paper")
        throw InvalidInput("model config: unknown preset '" + preset + "'");
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    try {
        get("emg_encoder", c.emg_encoder);
        get("emg_pool", c.emg_pool);
        get("emg_decoder", c.emg_decoder);
        get("emg_upsample", c.emg_upsample);
        get("emg_upsample_mode", c.emg_upsample_mode);
        get("resnet_layers", c.resnet_layers);
        get("resnet_channels", c.resnet_channels);
        get("stem_kernel", c.stem_kernel);
        get("stem_stride", c.stem_stride);
        get("stem_pool", c.stem_pool);
        get("feature_dim", c.feature_dim);
        get("fusion_width", c.fusion_width);
        get("conv_bias", c.conv_bias);
        get("regions", c.regions);
        get("p_max", c.p_max);
        get("bn_momentum", c.bn_momentum);
        get("bn_eps", c.bn_eps);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// Creates parameters in a fixed order from one seeded stream.
class PiMForceModel::Builder {
public:
    Builder(PiMForceModel& m, std::uint64_t seed) : m_(m), rng_(seed) {}

    Tensor uniform(const std::string& name, Shape shape, double bound) {
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = rng_.uniform(-bound, bound);
        Tensor t = Tensor::from(std::move(shape), std::move(v), true);
        m_.params_.push_back({name, t});
        return t;
    }

    Tensor constant(const std::string& name, Shape shape, double value, bool buffer) {
        Tensor t = Tensor::full(std::move(shape), value, !buffer);
        (buffer ? m_.buffers_ : m_.params_).push_back({name, t});
        return t;
    }

    Conv conv(const std::string& name, std::size_t in, std::size_t out, std::vector<std::size_t> kernel,
              std::size_t stride, std::size_t pad, bool bias) {
        std::size_t fan_in = in;
        for (auto k : kernel) fan_in *= k;
        Shape shape{out, in};
        shape.insert(shape.end(), kernel.begin(), kernel.end());
        Conv c;
        c.w = uniform(name + ".weight", shape, std::sqrt(6.0 / static_cast<double>(fan_in)));
        if (bias) c.b = uniform(name + ".bias", {out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        c.spec.stride = {stride, stride, stride};
        c.spec.pad = {pad, pad, pad};
        return c;
    }

    Norm norm(const std::string& name, std::size_t ch) {
        Norm n;
        n.gamma = constant(name + ".weight", {ch}, 1.0, false);
        n.beta = constant(name + ".bias", {ch}, 0.0, false);
        n.mean = constant(name + ".running_mean", {ch}, 0.0, true);
        n.var = constant(name + ".running_var", {ch}, 1.0, true);
        return n;
    }

    Dense dense(const std::string& name, std::size_t in, std::size_t out) {
        const double fan = static_cast<double>(in);
        Dense d;
        d.w = uniform(name + ".weight", {out, in}, std::sqrt(6.0 / fan));
        d.b = uniform(name + ".bias", {out}, 1.0 / std::sqrt(fan));
        return d;
    }

private:
    PiMForceModel& m_;
    Rng rng_;
};

PiMForceModel::PiMForceModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Builder b(*this, seed);
    const bool bias = cfg_.conv_bias;

    std::size_t ch = kEmgChannels, h = kEmgHeight, w = kEmgWidth;
    for (std::size_t i = 0; i < cfg_.emg_encoder.size(); ++i) {
        const std::string p = "emg.enc" + std::to_string(i);
        emg_enc_conv_.push_back(b.conv(p + ".conv", ch, cfg_.emg_encoder[i], {3, 3}, 1, 1, bias));
        emg_enc_bn_.push_back(b.norm(p + ".bn", cfg_.emg_encoder[i]));
        ch = cfg_.emg_encoder[i];
        h /= cfg_.emg_pool[i];
        w /= cfg_.emg_pool[i];
    }
    for (std::size_t i = 0; i < cfg_.emg_decoder.size(); ++i) {
        const std::string p = "emg.dec" + std::to_string(i);
        emg_dec_conv_.push_back(b.conv(p + ".conv", ch, cfg_.emg_decoder[i], {3, 3}, 1, 1, bias));
        emg_dec_bn_.push_back(b.norm(p + ".bn", cfg_.emg_decoder[i]));
        ch = cfg_.emg_decoder[i];
        h *= cfg_.emg_upsample[i];
        w *= cfg_.emg_upsample[i];
    }
    emg_flat_ = ch * h * w;
    emg_fc_ = b.dense("emg.fc", emg_flat_, cfg_.feature_dim);

    const std::size_t k = cfg_.stem_kernel;
    const std::size_t c0 = cfg_.resnet_channels[0];
    stem_ = b.conv("hand.stem.conv", kNumJoints, c0, {k, k, k}, cfg_.stem_stride, k / 2, bias);
    stem_bn_ = b.norm("hand.stem.bn", c0);
    ch = c0;
    for (std::size_t s = 0; s < cfg_.resnet_layers.size(); ++s) {
        const std::size_t out = cfg_.resnet_channels[s];
        for (std::size_t r = 0; r < cfg_.resnet_layers[s]; ++r) {
            const std::string p = "hand.layer" + std::to_string(s + 1) + "." + std::to_string(r);
            const std::size_t stride = (r == 0 && s > 0) ? 2 : 1;
            Block blk;
            blk.conv1 = b.conv(p + ".conv1", ch, out, {3, 3, 3}, stride, 1, bias);
            blk.bn1 = b.norm(p + ".bn1", out);
            blk.conv2 = b.conv(p + ".conv2", out, out, {3, 3, 3}, 1, 1, bias);
            blk.bn2 = b.norm(p + ".bn2", out);
            if (stride != 1 || ch != out) {
                blk.has_down = true;
                blk.down = b.conv(p + ".down", ch, out, {1, 1, 1}, stride, 0, bias);
                blk.down_bn = b.norm(p + ".down_bn", out);
            }
            blocks_.push_back(std::move(blk));
            ch = out;
        }
    }
    hand_fc_ = b.dense("hand.fc", ch, cfg_.feature_dim);

    fuse1_ = b.dense("fusion.fc1", 2 * cfg_.feature_dim, cfg_.fusion_width);
    fuse1_bn_ = b.norm("fusion.bn1", cfg_.fusion_width);
    fuse2_ = b.dense("fusion.fc2", cfg_.fusion_width, cfg_.fusion_width);
    fuse2_bn_ = b.norm("fusion.bn2", cfg_.fusion_width);
    head_ = b.dense("fusion.head", cfg_.fusion_width, cfg_.regions);
}

Tensor PiMForceModel::apply(const Conv& c, const Tensor& x) const { return conv(x, c.w, c.b, c.spec); }

Tensor PiMForceModel::apply(const Norm& n, const Tensor& x) const {
    BatchNormState st;
    st.running_mean = &n.mean.impl()->data;
    st.running_var = &n.var.impl()->data;
    st.momentum = cfg_.bn_momentum;
    st.eps = cfg_.bn_eps;
    return batch_norm(x, n.gamma, n.beta, st, training_);
}

Tensor PiMForceModel::apply(const Dense& d, const Tensor& x) const { return linear(x, d.w, d.b); }

Tensor PiMForceModel::apply(const Block& b, const Tensor& x) const {
    Tensor y = relu(apply(b.bn1, apply(b.conv1, x)));
    y = apply(b.bn2, apply(b.conv2, y));
    Tensor skip = b.has_down ? apply(b.down_bn, apply(b.down, x)) : x;
    return relu(add(y, skip));
}

Tensor PiMForceModel::emg_forward(const Tensor& e) const {
    if (e.rank() != 4 || e.dim(1) != kEmgChannels || e.dim(2) != kEmgHeight || e.dim(3) != kEmgWidth)
        throw ShapeError("emg_forward: expected [B, 8, 32, 64], got " + shape_str(e.shape()));
    Tensor x = e;
    for (std::size_t i = 0; i < emg_enc_conv_.size(); ++i) {
        x = relu(apply(emg_enc_bn_[i], apply(emg_enc_conv_[i], x)));
        const std::size_t p = cfg_.emg_pool[i];
        WindowSpec spec;
        spec.stride = {1, p, p};
        x = max_pool(x, {1, p, p}, spec);
    }
    for (std::size_t i = 0; i < emg_dec_conv_.size(); ++i) {
        x = relu(apply(emg_dec_bn_[i], apply(emg_dec_conv_[i], x)));
        const std::size_t u = cfg_.emg_upsample[i];
        if (u != 1)
            x = cfg_.emg_upsample_mode == "linear" ? upsample_linear(x, {1, u, u}) : upsample_nearest(x, {1, u, u});
    }
    x = reshape(x, {e.dim(0), emg_flat_});
    return apply(emg_fc_, x);
}

Tensor PiMForceModel::hand_forward(const HandInput& h) const {
    Tensor x;
    if (h.profiles.defined()) {
        const auto& s = h.profiles.shape();
        if (s.size() != 4 || s[1] != kNumJoints || s[2] != 3 || s[3] != kGrid)
            throw ShapeError("hand_forward: expected profiles [B, 21, 3, 48], got " + shape_str(s));
        if (stem_.b.defined())
            throw ShapeError("hand_forward: separable profiles require a bias-free stem");
        x = separable_conv3d(h.profiles, stem_.w, stem_.spec);
    } else if (h.dense.defined()) {
        const auto& s = h.dense.shape();
        if (s.size() != 5 || s[1] != kNumJoints || s[2] != kGrid || s[3] != kGrid || s[4] != kGrid)
            throw ShapeError("hand_forward: expected [B, 21, 48, 48, 48], got " + shape_str(s));
        x = apply(stem_, h.dense);
    } else {
        throw ShapeError("hand_forward: empty input");
    }
    x = relu(apply(stem_bn_, x));
    if (cfg_.stem_pool) {
        WindowSpec spec;
        spec.stride = {2, 2, 2};
        spec.pad = {1, 1, 1};
        x = max_pool(x, {3, 3, 3}, spec);
    }
    for (const auto& b : blocks_) x = apply(b, x);
    x = global_avg_pool(x);
    return apply(hand_fc_, x);
}

Tensor PiMForceModel::fusion_forward(const Tensor& f_emg, const Tensor& f_hand) const {
    if (f_emg.rank() != 2 || f_hand.rank() != 2 || f_emg.dim(0) != f_hand.dim(0) ||
        f_emg.dim(1) != cfg_.feature_dim || f_hand.dim(1) != cfg_.feature_dim)
        throw ShapeError("fusion_forward: feature shapes " + shape_str(f_emg.shape()) + " and " +
                         shape_str(f_hand.shape()));
    Tensor x = concat_features(f_emg, f_hand);
    x = relu(apply(fuse1_bn_, apply(fuse1_, x)));
    x = relu(apply(fuse2_bn_, apply(fuse2_, x)));
    return sigmoid(apply(head_, x));
}

Tensor PiMForceModel::forward(const Tensor& e, const HandInput& h) const {
    return fusion_forward(emg_forward(e), hand_forward(h));
}

ParamCounts PiMForceModel::parameter_counts() const {
    ParamCounts c;
    for (const auto& p : params_) {
        if (p.name.rfind("emg.", 0) == 0)
            c.emg += p.tensor.numel();
        else if (p.name.rfind("hand.", 0) == 0)
            c.hand += p.tensor.numel();
        else
            c.fusion += p.tensor.numel();
    }
    return c;
}

void PiMForceModel::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace pimforce::nn
