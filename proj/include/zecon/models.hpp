#pragma once

#include "zecon/autodiff.hpp"
#include "zecon/random.hpp"
#include "zecon/schedule.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace zecon {

/// One encoder feature map z_l, [C, H, W], still attached to the autodiff graph.
struct FeatureLayer {
    std::string id;
    ad::Var features;
};
using FeatureStack = std::vector<FeatureLayer>;

/// Noise predictor eps_theta(x_t, t). `t` is always a base-schedule timestep.
class ScoreAdapter {
public:
    virtual ~ScoreAdapter() = default;

    virtual std::string name() const = 0;
    virtual Tensor predict_eps(const Tensor& x_t, std::size_t t) const = 0;

    virtual bool has_encoder_features() const { return false; }
    /// Layer ids `encoder_features` can return, shallow to deep.
    virtual std::vector<std::string> feature_layers() const { return {}; }
    /// Encoder activations for `x` at timestep `t`, differentiable w.r.t. `x`.
    /// Must return every requested layer, in request order, or throw.
    virtual FeatureStack encoder_features(const ad::Var& x, std::size_t t,
                                          const std::vector<std::string>& layer_ids) const;

    /// Schedule the network was trained with, when known.
    virtual std::optional<NoiseSchedule> native_schedule() const { return std::nullopt; }
    /// Square input side the network expects, when fixed.
    virtual std::optional<std::size_t> image_size() const { return std::nullopt; }
};

/// Image-only embedder (used for face identity metrics).
class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    virtual std::string name() const = 0;
    virtual std::size_t input_size() const = 0;
    /// Unit-norm embedding of a [3, H, W] image, differentiable w.r.t. the image.
    /// Images whose side differs from `input_size` are resized first.
    virtual ad::Var embed_image(const ad::Var& image) const = 0;
    Tensor embed_image(const Tensor& image) const { return embed_image(ad::Var::constant(image)).value(); }
};

/// Joint text-image embedder (CLIP-style).
class EmbedderAdapter : public ImageEmbedder {
public:
    using ImageEmbedder::embed_image;
    /// Unit-norm embedding of a prompt.
    virtual Tensor embed_text(const std::string& text) const = 0;
};

/// Feature extractor behind the perceptual (VGG-style) content term.
class PerceptualExtractor {
public:
    virtual ~PerceptualExtractor() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::string> layers() const = 0;
    /// One feature tensor per declared layer.
    virtual std::vector<ad::Var> features(const ad::Var& image) const = 0;
};

// ---------------------------------------------------------------------------
// Reference adapters

/// Exact noise predictor for data distributed as N(mu, s2 I):
/// eps(x_t, t) = sqrt(1 - abar) (x_t - sqrt(abar) mu) / (abar s2 + 1 - abar).
class AnalyticGaussianScore final : public ScoreAdapter {
public:
    AnalyticGaussianScore(Tensor mu, double s2, NoiseSchedule schedule);

    std::string name() const override { return "analytic_gaussian"; }
    Tensor predict_eps(const Tensor& x_t, std::size_t t) const override;
    std::optional<NoiseSchedule> native_schedule() const override { return schedule_; }
    std::optional<std::size_t> image_size() const override { return mu_.dim(1); }

    const Tensor& mu() const { return mu_; }
    double s2() const { return s2_; }

private:
    Tensor mu_;
    double s2_;
    NoiseSchedule schedule_;
};

std::shared_ptr<AnalyticGaussianScore> analytic_gaussian_score(Tensor mu, double s2, NoiseSchedule schedule);

struct ToyUNetOptions {
    std::size_t channels = 16;
    std::size_t depth = 3;
    std::size_t image_size = 32;
    std::uint64_t seed = 0;
};

/// Small convolutional encoder-decoder with skip connections. Encoder block i
/// ("enc<i>") runs at image_size / 2^i. Timestep enters through a sinusoidal
/// embedding added as a channel bias after the first convolution.
class ToyUNet final : public ScoreAdapter {
public:
    ToyUNet(const ToyUNetOptions& options, std::optional<NoiseSchedule> schedule = std::nullopt);

    std::string name() const override { return "toy_unet"; }
    Tensor predict_eps(const Tensor& x_t, std::size_t t) const override;
    bool has_encoder_features() const override { return true; }
    std::vector<std::string> feature_layers() const override;
    FeatureStack encoder_features(const ad::Var& x, std::size_t t,
                                  const std::vector<std::string>& layer_ids) const override;
    std::optional<NoiseSchedule> native_schedule() const override { return schedule_; }
    std::optional<std::size_t> image_size() const override { return options_.image_size; }

    /// Full forward pass on the autodiff graph (used for training).
    ad::Var forward(const ad::Var& x, std::size_t t) const;

    const ToyUNetOptions& options() const { return options_; }
    /// Trainable tensors in a fixed order.
    std::vector<ad::Var> parameters() const;

    nlohmann::json to_json() const;
    static std::shared_ptr<ToyUNet> from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static std::shared_ptr<ToyUNet> load(const std::filesystem::path& path);

private:
    struct Conv {
        ad::Var weight, bias;
    };
    std::vector<ad::Var> encode(const ad::Var& x, std::size_t t, std::size_t levels) const;
    ad::Var time_bias(std::size_t t) const;
    void check_input(const std::vector<std::size_t>& shape) const;

    ToyUNetOptions options_;
    std::optional<NoiseSchedule> schedule_;
    ad::Var time_weight_, time_bias_;
    Conv stem_;
    std::vector<Conv> down_;
    std::vector<Conv> up_;
    Conv head_;
};

std::shared_ptr<ToyUNet> build_toy_unet(std::size_t channels, std::size_t depth, std::uint64_t seed,
                                        std::size_t image_size = 32);

struct ToyTrainingOptions {
    std::size_t steps = 400;
    double learning_rate = 2e-3;
    double time_budget_seconds = 120.0;
    std::uint64_t seed = 0;
};

/// Trains `net` to predict noise on synthetic coloured-blob images with Adam.
/// Returns the per-step training loss. Stops early when the time budget runs out.
std::vector<double> train_toy_unet(ToyUNet& net, const NoiseSchedule& schedule,
                                   const ToyTrainingOptions& options);

/// Synthetic training/test image: a few soft coloured blobs on a gradient, in [-1, 1].
Tensor make_blob_image(std::size_t size, RandomStream& rng);

/// Fixed random linear map of the (resized) image followed by L2 normalisation.
/// Text embeddings are seeded Gaussian vectors keyed by a hash of the prompt.
class StubEmbedder final : public EmbedderAdapter {
public:
    StubEmbedder(std::size_t dim, std::size_t input_size, std::uint64_t seed);

    std::string name() const override { return "stub"; }
    std::size_t input_size() const override { return input_size_; }
    using EmbedderAdapter::embed_image;
    ad::Var embed_image(const ad::Var& image) const override;
    Tensor embed_text(const std::string& text) const override;

    const Tensor& projection() const { return projection_.value(); }

private:
    std::size_t dim_, input_size_;
    std::uint64_t seed_;
    ad::Var projection_;
};

/// Resizes [C,H,W] to [C,size,size] on the graph; identity when already that size.
ad::Var resize_image(const ad::Var& image, std::size_t size);

class IdentityExtractor final : public PerceptualExtractor {
public:
    std::string name() const override { return "identity"; }
    std::vector<std::string> layers() const override { return {"pixels"}; }
    std::vector<ad::Var> features(const ad::Var& image) const override { return {image}; }
};

/// Per-pixel channel mixing: features = M * pixel for a fixed [O, C] matrix.
class LinearExtractor final : public PerceptualExtractor {
public:
    explicit LinearExtractor(Tensor matrix);
    std::string name() const override { return "linear"; }
    std::vector<std::string> layers() const override { return {"linear"}; }
    std::vector<ad::Var> features(const ad::Var& image) const override;
    const Tensor& matrix() const { return matrix_; }

private:
    Tensor matrix_;
    ad::Var weight_, bias_;
};

/// Two randomly initialised conv+SiLU blocks, the second at half resolution.
/// Stands in for a VGG feature network at desk scale.
class ToyConvExtractor final : public PerceptualExtractor {
public:
    ToyConvExtractor(std::size_t channels, std::uint64_t seed);
    std::string name() const override { return "toy_conv"; }
    std::vector<std::string> layers() const override { return {"block1", "block2"}; }
    std::vector<ad::Var> features(const ad::Var& image) const override;

private:
    ad::Var w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------
// Adapters backed by host callbacks (e.g. a Python/torch model).

struct ScoreCallbacks {
    std::function<Tensor(const Tensor&, std::size_t)> predict_eps;
    std::vector<std::string> layers;
    /// Returns one tensor per requested layer.
    std::function<std::vector<Tensor>(const Tensor&, std::size_t, const std::vector<std::string>&)> features;
    /// Given per-layer cotangents, returns d/dx of sum_l <cot_l, z_l(x)>.
    std::function<Tensor(const Tensor&, std::size_t, const std::vector<std::string>&,
                         const std::vector<Tensor>&)>
        features_vjp;
    std::optional<NoiseSchedule> schedule;
    std::optional<std::size_t> image_size;
};

class CallbackScoreAdapter final : public ScoreAdapter {
public:
    CallbackScoreAdapter(std::string name, ScoreCallbacks callbacks);
    std::string name() const override { return name_; }
    Tensor predict_eps(const Tensor& x_t, std::size_t t) const override;
    bool has_encoder_features() const override;
    std::vector<std::string> feature_layers() const override { return cb_.layers; }
    FeatureStack encoder_features(const ad::Var& x, std::size_t t,
                                  const std::vector<std::string>& layer_ids) const override;
    std::optional<NoiseSchedule> native_schedule() const override { return cb_.schedule; }
    std::optional<std::size_t> image_size() const override { return cb_.image_size; }

private:
    std::string name_;
    ScoreCallbacks cb_;
};

struct EmbedderCallbacks {
    std::size_t input_size = 224;
    std::function<Tensor(const Tensor&)> embed_image;
    std::function<Tensor(const Tensor&, const Tensor&)> embed_image_vjp;
    std::function<Tensor(const std::string&)> embed_text; // may be empty for image-only embedders
};

class CallbackEmbedder final : public EmbedderAdapter {
public:
    CallbackEmbedder(std::string name, EmbedderCallbacks callbacks);
    std::string name() const override { return name_; }
    std::size_t input_size() const override { return cb_.input_size; }
    using EmbedderAdapter::embed_image;
    ad::Var embed_image(const ad::Var& image) const override;
    Tensor embed_text(const std::string& text) const override;

private:
    std::string name_;
    EmbedderCallbacks cb_;
};

// ---------------------------------------------------------------------------
// Checkpoint descriptors and the adapter registry

/// Plain config entry naming an adapter type and where its weights live.
struct ModelDescriptor {
    std::string type;
    std::string path;                   ///< weight file; may use ${ZECON_CHECKPOINT_DIR}
    std::optional<std::size_t> image_size;
    std::size_t channels = 3;
    std::optional<ScheduleSpec> schedule; ///< T, beta_start, beta_end recorded with the checkpoint
    std::vector<std::string> layers;    ///< encoder layers feeding the contrastive loss
    nlohmann::json params = nlohmann::json::object();

    nlohmann::json to_json() const;
    static ModelDescriptor from_json(const nlohmann::json& j);
    /// Expands ${ZECON_CHECKPOINT_DIR} (or a leading relative path) against `checkpoint_root`.
    std::filesystem::path resolved_path(const std::filesystem::path& checkpoint_root) const;
};

/// Extra inputs a loader may bind to (e.g. the source image for a memorising prior).
struct LoadContext {
    std::filesystem::path checkpoint_root;
    const Tensor* source_image = nullptr;
    std::optional<ScheduleSpec> run_schedule;
};

class AdapterRegistry {
public:
    using ScoreLoader = std::function<std::shared_ptr<ScoreAdapter>(const ModelDescriptor&, const LoadContext&)>;
    using EmbedderLoader = std::function<std::shared_ptr<EmbedderAdapter>(const ModelDescriptor&, const LoadContext&)>;
    using ImageEmbedderLoader = std::function<std::shared_ptr<ImageEmbedder>(const ModelDescriptor&, const LoadContext&)>;
    using PerceptualLoader = std::function<std::shared_ptr<PerceptualExtractor>(const ModelDescriptor&, const LoadContext&)>;

    /// Registry pre-populated with the built-in reference adapters.
    static AdapterRegistry& global();

    void register_score(const std::string& type, ScoreLoader loader);
    void register_embedder(const std::string& type, EmbedderLoader loader);
    void register_face_embedder(const std::string& type, ImageEmbedderLoader loader);
    void register_perceptual(const std::string& type, PerceptualLoader loader);

    std::shared_ptr<ScoreAdapter> load_score(const ModelDescriptor& d, const LoadContext& ctx) const;
    std::shared_ptr<EmbedderAdapter> load_embedder(const ModelDescriptor& d, const LoadContext& ctx) const;
    std::shared_ptr<ImageEmbedder> load_face_embedder(const ModelDescriptor& d, const LoadContext& ctx) const;
    std::shared_ptr<PerceptualExtractor> load_perceptual(const ModelDescriptor& d, const LoadContext& ctx) const;

    std::vector<std::string> score_types() const;
    std::vector<std::string> embedder_types() const;
    std::vector<std::string> face_embedder_types() const;
    std::vector<std::string> perceptual_types() const;

private:
    std::map<std::string, ScoreLoader> score_;
    std::map<std::string, EmbedderLoader> embedder_;
    std::map<std::string, ImageEmbedderLoader> face_;
    std::map<std::string, PerceptualLoader> perceptual_;
};

/// Loads a score network through the global registry and checks its native
/// schedule against `ctx.run_schedule` (mismatch is an error, never an override).
std::shared_ptr<ScoreAdapter> load_pretrained(const ModelDescriptor& d, const LoadContext& ctx = {});

} // namespace zecon
