#include "zecon/models.hpp"

#include "zecon/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace zecon {

using nlohmann::json;

FeatureStack ScoreAdapter::encoder_features(const ad::Var&, std::size_t, const std::vector<std::string>&) const {
    throw Error("models", "adapter '" + name() + "' does not expose encoder features");
}

// ---------------------------------------------------------------------------
// Analytic Gaussian

AnalyticGaussianScore::AnalyticGaussianScore(Tensor mu, double s2, NoiseSchedule schedule)
    : mu_(std::move(mu)), s2_(s2), schedule_(std::move(schedule)) {
    if (!(s2_ >= 0.0)) throw ValidationError("models", "analytic Gaussian needs s2 >= 0");
    if (mu_.rank() != 3) throw ValidationError("models", "analytic Gaussian mean must be [C,H,W]");
}

Tensor AnalyticGaussianScore::predict_eps(const Tensor& x_t, std::size_t t) const {
    require_same_shape(x_t, mu_, "models.analytic_gaussian");
    const double ab = schedule_.alpha_bar(t);
    const double denom = ab * s2_ + 1.0 - ab;
    if (denom == 0.0) throw Error("models", "analytic Gaussian score undefined: abar*s2 + 1 - abar = 0");
    const double c = std::sqrt(1.0 - ab) / denom;
    const double m = std::sqrt(ab);
    Tensor eps(x_t.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = c * (x_t[i] - m * mu_[i]);
    return eps;
}

std::shared_ptr<AnalyticGaussianScore> analytic_gaussian_score(Tensor mu, double s2, NoiseSchedule schedule) {
    return std::make_shared<AnalyticGaussianScore>(std::move(mu), s2, std::move(schedule));
}

// ---------------------------------------------------------------------------
// Toy UNet

namespace {

constexpr std::size_t kTimeEmbed = 16;

Tensor he_normal(std::vector<std::size_t> shape, std::size_t fan_in, double gain, RandomStream& rng) {
    Tensor t = rng.normal(std::move(shape));
    t *= gain / std::sqrt(static_cast<double>(fan_in));
    return t;
}

Tensor sinusoid(std::size_t t) {
    Tensor e({kTimeEmbed});
    const std::size_t half = kTimeEmbed / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = std::sin(static_cast<double>(t) * freq);
        e[half + i] = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

std::size_t parse_enc_layer(const std::string& id, std::size_t depth) {
    if (id.rfind("enc", 0) == 0 && id.size() > 3 &&
        std::all_of(id.begin() + 3, id.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        const std::size_t level = std::stoul(id.substr(3));
        if (level < depth) return level;
    }
    throw Error("models", "toy_unet has no encoder layer '" + id + "'");
}

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.vec()}}; }

Tensor tensor_from_json(const json& j) {
    return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("data").get<std::vector<double>>());
}

} // namespace

ToyUNet::ToyUNet(const ToyUNetOptions& options, std::optional<NoiseSchedule> schedule)
    : options_(options), schedule_(std::move(schedule)) {
    if (options_.depth < 2) throw ValidationError("models", "toy_unet depth must be >= 2");
    if (options_.channels < 1) throw ValidationError("models", "toy_unet needs at least one channel");
    const std::size_t div = std::size_t{1} << (options_.depth - 1);
    if (options_.image_size < div || options_.image_size % div != 0) {
        throw ValidationError("models", "toy_unet image_size must be a multiple of 2^(depth-1)");
    }
    const std::size_t C = options_.channels;
    RandomStream rng(options_.seed, "toy_unet");
    auto conv = [&](std::size_t out, std::size_t in, double gain) {
        return Conv{ad::Var::constant(he_normal({out, in, 3, 3}, in * 9, gain, rng)),
                    ad::Var::constant(Tensor({out}))};
    };
    // Weights stay frozen unless a trainer flips them to parameters.
    time_weight_ = ad::Var::constant(he_normal({C, kTimeEmbed}, kTimeEmbed, 0.5, rng));
    time_bias_ = ad::Var::constant(Tensor({C}));
    stem_ = conv(C, 3, std::sqrt(2.0));
    for (std::size_t i = 1; i < options_.depth; ++i) down_.push_back(conv(C, C, std::sqrt(2.0)));
    for (std::size_t i = 1; i < options_.depth; ++i) up_.push_back(conv(C, C, std::sqrt(2.0)));
    head_ = conv(3, C, 1.0);
}

void ToyUNet::check_input(const std::vector<std::size_t>& shape) const {
    const std::size_t div = std::size_t{1} << (options_.depth - 1);
    if (shape.size() != 3 || shape[0] != 3 || shape[1] != shape[2] || shape[1] % div != 0 || shape[1] < div) {
        throw Error("models", "toy_unet expects a square [3,H,W] input with H divisible by " +
                                  std::to_string(div) + ", got " + shape_str(shape));
    }
}

ad::Var ToyUNet::time_bias(std::size_t t) const {
    return ad::add(ad::matvec(time_weight_, ad::Var::constant(sinusoid(t))), time_bias_);
}

std::vector<ad::Var> ToyUNet::encode(const ad::Var& x, std::size_t t, std::size_t levels) const {
    check_input(x.shape());
    std::vector<ad::Var> h;
    h.push_back(ad::silu(ad::add_channel_bias(ad::conv2d(x, stem_.weight, stem_.bias, 1, 1), time_bias(t))));
    for (std::size_t i = 1; i < levels; ++i) {
        h.push_back(ad::silu(ad::conv2d(h.back(), down_[i - 1].weight, down_[i - 1].bias, 2, 1)));
    }
    return h;
}

ad::Var ToyUNet::forward(const ad::Var& x, std::size_t t) const {
    auto h = encode(x, t, options_.depth);
    ad::Var u = h.back();
    for (std::size_t j = options_.depth - 1; j-- > 0;) {
        const Conv& c = up_[j];
        u = ad::silu(ad::conv2d(ad::add(ad::upsample2x(u), h[j]), c.weight, c.bias, 1, 1));
    }
    return ad::conv2d(u, head_.weight, head_.bias, 1, 1);
}

Tensor ToyUNet::predict_eps(const Tensor& x_t, std::size_t t) const {
    return forward(ad::Var::constant(x_t), t).value();
}

std::vector<std::string> ToyUNet::feature_layers() const {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < options_.depth; ++i) ids.push_back("enc" + std::to_string(i));
    return ids;
}

FeatureStack ToyUNet::encoder_features(const ad::Var& x, std::size_t t,
                                       const std::vector<std::string>& layer_ids) const {
    std::vector<std::size_t> levels;
    for (const auto& id : layer_ids) levels.push_back(parse_enc_layer(id, options_.depth));
    const std::size_t deepest = levels.empty() ? 0 : *std::max_element(levels.begin(), levels.end());
    auto h = encode(x, t, deepest + 1);
    FeatureStack out;
    for (std::size_t i = 0; i < layer_ids.size(); ++i) out.push_back({layer_ids[i], h[levels[i]]});
    return out;
}

std::vector<ad::Var> ToyUNet::parameters() const {
    std::vector<ad::Var> p{time_weight_, time_bias_, stem_.weight, stem_.bias};
    for (const auto& c : down_) {
        p.push_back(c.weight);
        p.push_back(c.bias);
    }
    for (const auto& c : up_) {
        p.push_back(c.weight);
        p.push_back(c.bias);
    }
    p.push_back(head_.weight);
    p.push_back(head_.bias);
    return p;
}

json ToyUNet::to_json() const {
    json j{{"format", "zecon.toy_unet.v1"},
           {"channels", options_.channels},
           {"depth", options_.depth},
           {"image_size", options_.image_size},
           {"seed", options_.seed}};
    if (schedule_) j["schedule_betas"] = schedule_->betas();
    json params = json::array();
    for (const auto& p : parameters()) params.push_back(tensor_json(p.value()));
    j["parameters"] = std::move(params);
    return j;
}

std::shared_ptr<ToyUNet> ToyUNet::from_json(const json& j) {
    if (j.value("format", "") != "zecon.toy_unet.v1") throw Error("models", "not a toy_unet weight file");
    ToyUNetOptions o;
    o.channels = j.at("channels").get<std::size_t>();
    o.depth = j.at("depth").get<std::size_t>();
    o.image_size = j.at("image_size").get<std::size_t>();
    o.seed = j.at("seed").get<std::uint64_t>();
    std::optional<NoiseSchedule> sched;
    if (j.contains("schedule_betas")) sched = NoiseSchedule(j["schedule_betas"].get<std::vector<double>>());
    auto net = std::make_shared<ToyUNet>(o, std::move(sched));
    auto params = net->parameters();
    const auto& stored = j.at("parameters");
    if (stored.size() != params.size()) throw Error("models", "toy_unet weight file has wrong parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].assign(tensor_from_json(stored[i]));
    return net;
}

void ToyUNet::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw Error("models", "cannot write " + path.string());
    os << to_json().dump();
}

std::shared_ptr<ToyUNet> ToyUNet::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("models", "missing checkpoint file " + path.string());
    return from_json(json::parse(is));
}

std::shared_ptr<ToyUNet> build_toy_unet(std::size_t channels, std::size_t depth, std::uint64_t seed,
                                        std::size_t image_size) {
    return std::make_shared<ToyUNet>(ToyUNetOptions{channels, depth, image_size, seed});
}

Tensor make_blob_image(std::size_t size, RandomStream& rng) {
    Tensor img({3, size, size});
    const double s = static_cast<double>(size);
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(-0.6, 0.2);
        gx[c] = rng.uniform(-0.3, 0.3);
        gy[c] = rng.uniform(-0.3, 0.3);
    }
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                img.at(c, y, x) = base[c] + gx[c] * (x / s - 0.5) + gy[c] * (y / s - 0.5);
    const int blobs = 2 + static_cast<int>(rng.uniform_index(3));
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0.15, 0.85) * s, cy = rng.uniform(0.15, 0.85) * s;
        const double r = rng.uniform(0.08, 0.25) * s;
        double col[3];
        for (double& v : col) v = rng.uniform(-1.0, 1.0);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = (x + 0.5 - cx) / r, dy = (y + 0.5 - cy) / r;
                const double w = std::exp(-0.5 * (dx * dx + dy * dy) * 2.0);
                for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = (1.0 - w) * img.at(c, y, x) + w * col[c];
            }
    }
    return clamp(std::move(img), -1.0, 1.0);
}

std::vector<double> train_toy_unet(ToyUNet& net, const NoiseSchedule& schedule, const ToyTrainingOptions& options) {
    auto params = net.parameters();
    for (auto& p : params) p.set_requires_grad(true);
    std::vector<Tensor> m, v;
    for (const auto& p : params) {
        m.push_back(Tensor::zeros_like(p.value()));
        v.push_back(Tensor::zeros_like(p.value()));
    }
    constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
    RandomStream rng(options.seed, "toy_training");
    const std::size_t size = net.options().image_size;
    std::vector<double> losses;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t step = 1; step <= options.steps; ++step) {
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (elapsed > options.time_budget_seconds) break;

        Tensor x0 = make_blob_image(size, rng);
        const std::size_t t = rng.uniform_index(schedule.steps());
        Tensor eps = rng.normal({3, size, size});
        Tensor xt = forward_diffuse(schedule, x0, t, eps);
        for (auto& p : params) p.zero_grad();
        auto loss = ad::mse(net.forward(ad::Var::constant(xt), t), ad::Var::constant(eps));
        ad::backward(loss);
        losses.push_back(loss.value().item());

        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor g = params[i].grad();
            Tensor w = params[i].value();
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[i][k] = b1 * m[i][k] + (1.0 - b1) * g[k];
                v[i][k] = b2 * v[i][k] + (1.0 - b2) * g[k] * g[k];
                w[k] -= options.learning_rate * (m[i][k] / c1) / (std::sqrt(v[i][k] / c2) + adam_eps);
            }
            params[i].assign(std::move(w));
        }
    }
    for (auto& p : params) {
        p.zero_grad();
        p.set_requires_grad(false);
    }
    return losses;
}

// ---------------------------------------------------------------------------
// Embedders and perceptual extractors

ad::Var resize_image(const ad::Var& image, std::size_t size) {
    const auto& s = image.shape();
    if (s.size() != 3) throw Error("models", "expected a [C,H,W] image, got " + shape_str(s));
    if (s[1] == size && s[2] == size) return image;
    return ad::resample(image, ad::SampleMap::resize(s[1], s[2], size, size));
}

namespace {

std::uint64_t text_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace

StubEmbedder::StubEmbedder(std::size_t dim, std::size_t input_size, std::uint64_t seed)
    : dim_(dim), input_size_(input_size), seed_(seed) {
    if (dim_ < 2 || input_size_ < 1) throw ValidationError("models", "stub embedder needs dim >= 2, input_size >= 1");
    RandomStream rng(seed_, "stub_embedder/image");
    const std::size_t n = 3 * input_size_ * input_size_;
    projection_ = ad::Var::constant(he_normal({dim_, n}, n, 1.0, rng));
}

ad::Var StubEmbedder::embed_image(const ad::Var& image) const {
    if (image.shape().size() != 3 || image.shape()[0] != 3) {
        throw Error("models", "stub embedder expects a [3,H,W] image, got " + shape_str(image.shape()));
    }
    auto small = resize_image(image, input_size_);
    auto flat = ad::reshape(small, {3 * input_size_ * input_size_});
    return ad::normalize_rows(ad::matvec(projection_, flat));
}

Tensor StubEmbedder::embed_text(const std::string& text) const {
    RandomStream rng(seed_ ^ text_hash(text), "stub_embedder/text");
    auto v = ad::Var::constant(rng.normal({dim_}));
    return ad::normalize_rows(v).value();
}

LinearExtractor::LinearExtractor(Tensor matrix) : matrix_(std::move(matrix)) {
    if (matrix_.rank() != 2) throw ValidationError("models", "linear extractor needs an [O, C] matrix");
    const std::size_t O = matrix_.dim(0), C = matrix_.dim(1);
    weight_ = ad::Var::constant(matrix_.reshaped({O, C, 1, 1}));
    bias_ = ad::Var::constant(Tensor({O}));
}

std::vector<ad::Var> LinearExtractor::features(const ad::Var& image) const {
    return {ad::conv2d(image, weight_, bias_, 1, 0)};
}

ToyConvExtractor::ToyConvExtractor(std::size_t channels, std::uint64_t seed) {
    RandomStream rng(seed, "toy_conv_extractor");
    w1_ = ad::Var::constant(he_normal({channels, 3, 3, 3}, 27, std::sqrt(2.0), rng));
    b1_ = ad::Var::constant(Tensor({channels}));
    w2_ = ad::Var::constant(he_normal({channels, channels, 3, 3}, channels * 9, std::sqrt(2.0), rng));
    b2_ = ad::Var::constant(Tensor({channels}));
}

std::vector<ad::Var> ToyConvExtractor::features(const ad::Var& image) const {
    auto h1 = ad::silu(ad::conv2d(image, w1_, b1_, 1, 1));
    auto h2 = ad::silu(ad::conv2d(h1, w2_, b2_, 2, 1));
    return {h1, h2};
}

// ---------------------------------------------------------------------------
// Callback-backed adapters

CallbackScoreAdapter::CallbackScoreAdapter(std::string name, ScoreCallbacks callbacks)
    : name_(std::move(name)), cb_(std::move(callbacks)) {
    if (!cb_.predict_eps) throw ValidationError("models", "callback score adapter needs predict_eps");
}

Tensor CallbackScoreAdapter::predict_eps(const Tensor& x_t, std::size_t t) const {
    Tensor eps = cb_.predict_eps(x_t, t);
    if (!eps.same_shape(x_t)) {
        throw Error("models", name_ + ": predict_eps returned " + shape_str(eps.shape()) + " for input " +
                                  shape_str(x_t.shape()));
    }
    return eps;
}

bool CallbackScoreAdapter::has_encoder_features() const { return cb_.features && cb_.features_vjp; }

FeatureStack CallbackScoreAdapter::encoder_features(const ad::Var& x, std::size_t t,
                                                    const std::vector<std::string>& layer_ids) const {
    if (!has_encoder_features()) return ScoreAdapter::encoder_features(x, t, layer_ids);
    for (const auto& id : layer_ids) {
        if (std::find(cb_.layers.begin(), cb_.layers.end(), id) == cb_.layers.end()) {
            throw Error("models", name_ + " has no encoder layer '" + id + "'");
        }
    }
    auto feats = cb_.features(x.value(), t, layer_ids);
    if (feats.size() != layer_ids.size()) throw Error("models", name_ + ": features returned wrong layer count");

    // One graph node for all layers so the host computes a single VJP.
    std::vector<std::vector<std::size_t>> shapes;
    std::vector<double> flat;
    for (const auto& f : feats) {
        shapes.push_back(f.shape());
        flat.insert(flat.end(), f.vec().begin(), f.vec().end());
    }
    const std::size_t total = flat.size();
    Tensor xv = x.value();
    auto vjp_cb = cb_.features_vjp;
    auto joined = ad::custom({x}, Tensor({total}, std::move(flat)),
                             [=](const Tensor& g) {
                                 std::vector<Tensor> cots;
                                 std::size_t off = 0;
                                 for (const auto& s : shapes) {
                                     const std::size_t n = numel(s);
                                     cots.emplace_back(s, std::vector<double>(g.vec().begin() + static_cast<long>(off),
                                                                              g.vec().begin() + static_cast<long>(off + n)));
                                     off += n;
                                 }
                                 return std::vector<Tensor>{vjp_cb(xv, t, layer_ids, cots)};
                             });
    FeatureStack out;
    std::size_t off = 0;
    for (std::size_t i = 0; i < layer_ids.size(); ++i) {
        out.push_back({layer_ids[i], ad::slice(joined, off, shapes[i])});
        off += numel(shapes[i]);
    }
    return out;
}

CallbackEmbedder::CallbackEmbedder(std::string name, EmbedderCallbacks callbacks)
    : name_(std::move(name)), cb_(std::move(callbacks)) {
    if (!cb_.embed_image) throw ValidationError("models", "callback embedder needs embed_image");
}

ad::Var CallbackEmbedder::embed_image(const ad::Var& image) const {
    auto resized = resize_image(image, cb_.input_size);
    Tensor xv = resized.value();
    Tensor e = cb_.embed_image(xv);
    auto vjp = cb_.embed_image_vjp;
    const std::string n = name_;
    return ad::custom({resized}, std::move(e), [xv, vjp, n](const Tensor& g) {
        if (!vjp) throw Error("models", n + " is not differentiable (no embed_image_vjp)");
        return std::vector<Tensor>{vjp(xv, g)};
    });
}

Tensor CallbackEmbedder::embed_text(const std::string& text) const {
    if (!cb_.embed_text) throw Error("models", name_ + " has no text encoder");
    return cb_.embed_text(text);
}

// ---------------------------------------------------------------------------
// Descriptors and registry

json ModelDescriptor::to_json() const {
    json j{{"type", type}, {"channels", channels}, {"params", params}};
    if (!path.empty()) j["path"] = path;
    if (image_size) j["image_size"] = *image_size;
    if (schedule) {
        j["schedule"] = {{"T", schedule->steps}, {"beta_start", schedule->beta_start}, {"beta_end", schedule->beta_end}};
    }
    if (!layers.empty()) j["layers"] = layers;
    return j;
}

ModelDescriptor ModelDescriptor::from_json(const json& j) {
    ModelDescriptor d;
    d.type = j.at("type").get<std::string>();
    d.path = j.value("path", "");
    if (j.contains("image_size")) d.image_size = j["image_size"].get<std::size_t>();
    d.channels = j.value("channels", std::size_t{3});
    if (j.contains("schedule")) {
        ScheduleSpec s;
        const auto& js = j["schedule"];
        s.steps = js.value("T", s.steps);
        s.beta_start = js.value("beta_start", s.beta_start);
        s.beta_end = js.value("beta_end", s.beta_end);
        s.respaced_steps = std::min(s.respaced_steps, s.steps);
        d.schedule = s;
    }
    if (j.contains("layers")) d.layers = j["layers"].get<std::vector<std::string>>();
    if (j.contains("params")) d.params = j["params"];
    return d;
}

std::filesystem::path ModelDescriptor::resolved_path(const std::filesystem::path& checkpoint_root) const {
    std::string p = path;
    const std::string var = "${ZECON_CHECKPOINT_DIR}";
    if (auto pos = p.find(var); pos != std::string::npos) {
        std::string root = checkpoint_root.string();
        if (root.empty()) root = ".";
        p.replace(pos, var.size(), root);
        return p;
    }
    std::filesystem::path fp(p);
    if (fp.is_relative() && !checkpoint_root.empty()) return checkpoint_root / fp;
    return fp;
}

namespace {

std::string known_list(const std::vector<std::string>& names) {
    std::string s;
    for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
    return s.empty() ? "(none)" : s;
}

template <class Map>
std::vector<std::string> keys(const Map& m) {
    std::vector<std::string> out;
    for (const auto& [k, _] : m) out.push_back(k);
    return out;
}

template <class Map>
const typename Map::mapped_type& find_loader(const Map& m, const std::string& type, const char* kind) {
    auto it = m.find(type);
    if (it == m.end()) {
        throw ValidationError("models", std::string("unknown ") + kind + " type '" + type +
                                            "'; known types: " + known_list(keys(m)));
    }
    return it->second;
}

NoiseSchedule schedule_for(const ModelDescriptor& d, const LoadContext& ctx) {
    if (d.schedule) return make_linear_schedule(d.schedule->steps, d.schedule->beta_start, d.schedule->beta_end);
    if (ctx.run_schedule) {
        return make_linear_schedule(ctx.run_schedule->steps, ctx.run_schedule->beta_start, ctx.run_schedule->beta_end);
    }
    return make_linear_schedule(1000, 1e-4, 0.02);
}

void register_builtins(AdapterRegistry& r) {
    r.register_score("toy_unet", [](const ModelDescriptor& d, const LoadContext& ctx) -> std::shared_ptr<ScoreAdapter> {
        std::optional<NoiseSchedule> sched;
        if (d.schedule) sched = schedule_for(d, ctx);
        if (!d.path.empty()) {
            auto net = ToyUNet::load(d.resolved_path(ctx.checkpoint_root));
            if (d.image_size && *d.image_size != net->options().image_size) {
                throw ValidationError("models", "descriptor image_size " + std::to_string(*d.image_size) +
                                                    " differs from checkpoint " +
                                                    std::to_string(net->options().image_size));
            }
            if (sched && !net->native_schedule()) {
                auto j = net->to_json();
                j["schedule_betas"] = sched->betas();
                return ToyUNet::from_json(j);
            }
            return net;
        }
        ToyUNetOptions o;
        o.channels = d.params.value("channels", o.channels);
        o.depth = d.params.value("depth", o.depth);
        o.seed = d.params.value("seed", o.seed);
        o.image_size = d.image_size.value_or(o.image_size);
        return std::make_shared<ToyUNet>(o, sched);
    });

    r.register_score("analytic_gaussian",
                     [](const ModelDescriptor& d, const LoadContext& ctx) -> std::shared_ptr<ScoreAdapter> {
        const double s2 = d.params.value("s2", 1.0);
        const std::string mu = d.params.contains("mu") && d.params["mu"].is_string() ? d.params["mu"].get<std::string>()
                                                                                   : std::string("source");
        const std::size_t size = d.image_size.value_or(ctx.source_image ? ctx.source_image->dim(1) : 32);
        Tensor mean({3, size, size});
        if (mu == "source") {
            if (!ctx.source_image) throw ValidationError("models", "analytic_gaussian with mu=source needs a source image");
            mean = *ctx.source_image;
        } else if (mu != "zeros") {
            throw ValidationError("models", "analytic_gaussian mu must be 'source' or 'zeros'");
        }
        return analytic_gaussian_score(std::move(mean), s2, schedule_for(d, ctx));
    });

    r.register_embedder("stub", [](const ModelDescriptor& d, const LoadContext&) -> std::shared_ptr<EmbedderAdapter> {
        return std::make_shared<StubEmbedder>(d.params.value("dim", std::size_t{64}), d.image_size.value_or(16),
                                              d.params.value("seed", std::uint64_t{0}));
    });

    r.register_perceptual("identity", [](const ModelDescriptor&, const LoadContext&) -> std::shared_ptr<PerceptualExtractor> {
        return std::make_shared<IdentityExtractor>();
    });
    r.register_perceptual("linear", [](const ModelDescriptor& d, const LoadContext&) -> std::shared_ptr<PerceptualExtractor> {
        if (d.params.contains("matrix")) {
            auto rows = d.params["matrix"].get<std::vector<std::vector<double>>>();
            if (rows.empty()) throw ValidationError("models", "linear extractor matrix is empty");
            std::vector<double> flat;
            for (const auto& row : rows) {
                if (row.size() != 3) throw ValidationError("models", "linear extractor rows must have 3 entries");
                flat.insert(flat.end(), row.begin(), row.end());
            }
            return std::make_shared<LinearExtractor>(Tensor({rows.size(), 3}, std::move(flat)));
        }
        RandomStream rng(d.params.value("seed", std::uint64_t{0}), "linear_extractor");
        return std::make_shared<LinearExtractor>(rng.normal({d.params.value("out_channels", std::size_t{8}), 3}));
    });
    r.register_perceptual("toy_conv", [](const ModelDescriptor& d, const LoadContext&) -> std::shared_ptr<PerceptualExtractor> {
        return std::make_shared<ToyConvExtractor>(d.params.value("channels", std::size_t{8}),
                                                  d.params.value("seed", std::uint64_t{0}));
    });
}

} // namespace

AdapterRegistry& AdapterRegistry::global() {
    static AdapterRegistry registry = [] {
        AdapterRegistry r;
        register_builtins(r);
        return r;
    }();
    return registry;
}

void AdapterRegistry::register_score(const std::string& type, ScoreLoader loader) { score_[type] = std::move(loader); }
void AdapterRegistry::register_embedder(const std::string& type, EmbedderLoader loader) {
    embedder_[type] = std::move(loader);
}
void AdapterRegistry::register_face_embedder(const std::string& type, ImageEmbedderLoader loader) {
    face_[type] = std::move(loader);
}
void AdapterRegistry::register_perceptual(const std::string& type, PerceptualLoader loader) {
    perceptual_[type] = std::move(loader);
}

std::shared_ptr<ScoreAdapter> AdapterRegistry::load_score(const ModelDescriptor& d, const LoadContext& ctx) const {
    return find_loader(score_, d.type, "score adapter")(d, ctx);
}
std::shared_ptr<EmbedderAdapter> AdapterRegistry::load_embedder(const ModelDescriptor& d, const LoadContext& ctx) const {
    return find_loader(embedder_, d.type, "embedder")(d, ctx);
}
std::shared_ptr<ImageEmbedder> AdapterRegistry::load_face_embedder(const ModelDescriptor& d,
                                                                   const LoadContext& ctx) const {
    return find_loader(face_, d.type, "face embedder")(d, ctx);
}
std::shared_ptr<PerceptualExtractor> AdapterRegistry::load_perceptual(const ModelDescriptor& d,
                                                                      const LoadContext& ctx) const {
    return find_loader(perceptual_, d.type, "perceptual extractor")(d, ctx);
}

std::vector<std::string> AdapterRegistry::score_types() const { return keys(score_); }
std::vector<std::string> AdapterRegistry::embedder_types() const { return keys(embedder_); }
std::vector<std::string> AdapterRegistry::face_embedder_types() const { return keys(face_); }
std::vector<std::string> AdapterRegistry::perceptual_types() const { return keys(perceptual_); }

std::shared_ptr<ScoreAdapter> load_pretrained(const ModelDescriptor& d, const LoadContext& ctx) {
    if (!d.path.empty() && !std::filesystem::exists(d.resolved_path(ctx.checkpoint_root))) {
        throw Error("models", "missing checkpoint file " + d.resolved_path(ctx.checkpoint_root).string());
    }
    auto adapter = AdapterRegistry::global().load_score(d, ctx);
    if (d.image_size && adapter->image_size() && *adapter->image_size() != *d.image_size) {
        throw ValidationError("models", "adapter image size " + std::to_string(*adapter->image_size()) +
                                            " differs from descriptor " + std::to_string(*d.image_size));
    }
    if (ctx.run_schedule) {
        if (auto native = adapter->native_schedule()) {
            const auto run = make_linear_schedule(ctx.run_schedule->steps, ctx.run_schedule->beta_start,
                                                  ctx.run_schedule->beta_end);
            bool same = native->steps() == run.steps();
            for (std::size_t t = 0; same && t < run.steps(); ++t) {
                same = std::abs(native->betas()[t] - run.betas()[t]) <= 1e-12 * run.betas()[t];
            }
            if (!same) {
                throw ValidationError("models", "schedule conflict: checkpoint '" + d.type + "' has T=" +
                                                    std::to_string(native->steps()) + ", run config has T=" +
                                                    std::to_string(run.steps()) +
                                                    (native->steps() == run.steps() ? " with different betas" : ""));
            }
        }
    }
    return adapter;
}

} // namespace zecon
