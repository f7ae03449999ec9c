#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ecgan/data.hpp"
#include "ecgan/nn.hpp"
#include "ecgan/optim.hpp"

namespace ecgan {

enum class Variant { baseline, ecgan, shared, ecgan_conditional };

std::string_view variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);

struct HyperParams {
  Real lambda = Real(0.1);     // adversarial weight on the generated-data loss
  Real threshold = Real(0.7);  // pseudo-label confidence threshold
  Real lr_g = Real(0.0002);
  Real lr_d = Real(0.0002);
  Real lr_c = Real(0.0002);
  Real weight_decay = Real(0.001);  // coupled L2 on the classifier; 0 disables
  int batch_size = 32;
  int epochs = 15;
  std::uint64_t seed = 0;
  Variant variant = Variant::ecgan;
  // Adam first-moment decay: DCGAN convention for G/D, standard for the classifier.
  Real beta1_gan = Real(0.5);
  Real beta1_classifier = Real(0.9);
  Real beta2 = Real(0.999);
  /// Shared baseline only: also train the class head on pseudo-labeled generated
  /// images (off by default; the shared method does not classify GAN images).
  bool shared_classify_generated = false;

  void validate() const;
};

/// Network widths used by train().
struct ModelConfig {
  int gan_width = 16;
  int classifier_width = 16;
  int classifier_depth = 1;
};

struct PseudoLabelResult {
  Tensor kept_images;            // [M,C,H,W]; empty shape when no images were given
  std::vector<int> kept_rows;    // rows of the input batch, ascending
  std::vector<int> kept_labels;  // argmax class per kept row
  double keep_rate = 0.0;        // M / B
  std::vector<Real> max_probs;   // per input row
};

/// Keep row i iff max softmax(logits_i) > t (strict); label = argmax, lowest
/// index on ties. Labels are plain integers: no gradient path.
PseudoLabelResult pseudo_label(const Tensor& logits, Real threshold, const Tensor* images = nullptr);

struct StepMetrics {
  double loss_d = 0, loss_g = 0, loss_c_sup = 0, loss_c_unsup = 0;
  double keep_rate = 0;
  std::int64_t step = 0;
  int epoch = 0;
};

/// Per-step settings shared by the GAN steps.
struct GanStepOptions {
  bool conditional = false;
  int num_classes = 2;
  std::int64_t step = 0;  // reported in DivergedError
};

/// L_D = BCE(D(x),1) + BCE(D(G(z)),0), one Adam step on D. Generated images are
/// constants for this update; G's parameters and running stats are untouched.
double discriminator_step(Network& d, Network& g, const Batch& real, Adam& opt_d, Rng& rng,
                          const GanStepOptions& opt = {});

/// L_G = BCE(D(G(z)),1); gradients flow through D but only G is updated.
/// Works with a plain, conditional, or shared discriminator (real/fake head).
double generator_step(Network& g, Network& d, int batch_size, Adam& opt_g, Rng& rng, const GanStepOptions& opt = {});

struct ClassifierStepResult {
  double loss_sup = 0;
  double loss_unsup = 0;
  double keep_rate = 0;
};

/// L_C = CE(C(x), y) + lambda * CE(C(G(z))[kept], pseudo-labels), one combined
/// backward and one Adam step on C. Generated images are detached from G; the
/// generated forward does not touch C's running statistics.
ClassifierStepResult classifier_step(Network& c, Network& g, const Batch& real, const HyperParams& hp, Adam& opt_c,
                                     Rng& rng, const GanStepOptions& opt = {});

/// Supervised-only step: CE(C(x), y) with weight decay and one Adam step.
double supervised_step(Network& c, const Batch& real, const HyperParams& hp, Adam& opt_c, std::int64_t step = 0);

/// lambda*(BCE(D_d(G(z)),0) + BCE(D_d(x),1)) + CE(D_c(x), y) as one objective on
/// the shared discriminator, followed by a generator step against D_d.
StepMetrics shared_step(Network& sd, Network& g, const Batch& real, const HyperParams& hp, Adam& opt_sd, Adam& opt_g,
                        Rng& rng, const GanStepOptions& opt = {});

struct EpochMetrics {
  int epoch = 0;
  double loss_d = 0, loss_g = 0, loss_c_sup = 0, loss_c_unsup = 0;
  double keep_rate = 0;
  double train_acc = 0;
  double test_acc = 0;
};

/// Networks and optimizers owned by one training run.
struct TrainState {
  Network classifier;  // external classifier, or the shared discriminator
  Adam opt_c;
  std::optional<Network> generator;
  std::optional<Network> discriminator;  // absent for baseline and shared
  std::optional<Adam> opt_g;
  std::optional<Adam> opt_d;
  std::int64_t step = 0;
};

struct TrainCallbacks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EpochMetrics&, const TrainState&)> on_epoch;
};

struct TrainOptions {
  ModelConfig model;
  AugmentPolicy augment;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> history;
};

/// Per minibatch: D step, G step, then the classifier update for the variant.
/// Evaluates train/test accuracy after every epoch. `test` may be null.
TrainResult train(const Dataset& train_set, const Dataset* test, const HyperParams& hp, const TrainOptions& opt = {},
                  const TrainCallbacks& callbacks = {});

/// Fraction of correct argmax predictions with batch norm in eval mode.
/// Works for classifiers and shared discriminators (class head).
/// Throws ContractError on an empty dataset.
double evaluate(Network& classifier, const Dataset& ds);
/// Argmax predictions in eval mode.
std::vector<int> predict(Network& classifier, const Tensor& normalized_images);

}  // namespace ecgan
