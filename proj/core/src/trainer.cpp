#include "ecgan/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "ecgan/error.hpp"

namespace ecgan {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::ecgan:
      return "ecgan";
    case Variant::shared:
      return "shared";
    case Variant::ecgan_conditional:
      return "ecgan_conditional";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::baseline, Variant::ecgan, Variant::shared, Variant::ecgan_conditional}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

void HyperParams::validate() const {
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must be in [0,1]");
  if (!(lr_g > 0 && lr_d > 0 && lr_c > 0)) throw ConfigError("learning rates must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

PseudoLabelResult pseudo_label(const Tensor& logits, Real threshold, const Tensor* images) {
  if (logits.rank() != 2) throw ShapeError("pseudo_label expects [B,K] logits, got " + shape_str(logits.shape()));
  Tape tape = Tape::inference();
  const Tensor p = ops::softmax(tape, logits);
  const int b = logits.dim(0), k = logits.dim(1);
  PseudoLabelResult r;
  r.max_probs.resize(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const Real* row = p.data().data() + static_cast<std::size_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    r.max_probs[static_cast<std::size_t>(i)] = row[best];
    if (row[best] > threshold) {
      r.kept_rows.push_back(i);
      r.kept_labels.push_back(best);
    }
  }
  r.keep_rate = b > 0 ? static_cast<double>(r.kept_rows.size()) / b : 0.0;
  if (images) r.kept_images = ops::select_rows(tape, *images, r.kept_rows);
  return r;
}

namespace {

void check_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) throw DivergedError(std::string("training diverged: ") + what + " is not finite", step);
}

LatentVector sample_latent(int n, Rng& rng, const GanStepOptions& opt) {
  if (!opt.conditional) return latent(n, rng);
  const auto labels = balanced_labels(n, opt.num_classes);
  return conditional_latent(labels, opt.num_classes, rng);
}

// Real/fake probability from any discriminator flavour.
Tensor disc_prob(Network& d, Tape& tape, const Tensor& images, std::span<const int> labels,
                 const ForwardOptions& fo) {
  switch (d.spec().role) {
    case Role::discriminator:
      return d.spec().conditional ? d.forward_conditional(tape, images, labels, fo) : d.forward(tape, images, fo);
    case Role::shared_discriminator:
      return d.forward_shared(tape, images, fo).prob;
    default:
      throw ContractError("network is not a discriminator");
  }
}

Tensor generate(Network& g, const LatentVector& z) {
  Tape tape = Tape::inference();
  ForwardOptions fo;
  fo.update_running_stats = false;
  return g.forward(tape, z.values, fo);
}

}  // namespace

double discriminator_step(Network& d, Network& g, const Batch& real, Adam& opt_d, Rng& rng,
                          const GanStepOptions& opt) {
  const int b = real.size();
  const LatentVector z = sample_latent(b, rng, opt);
  const Tensor fake = generate(g, z);

  d.zero_grad();
  Tape tape;
  const Tensor p_real = disc_prob(d, tape, real.images, real.labels, {});
  const Tensor p_fake = disc_prob(d, tape, fake, z.conditional_class, {});
  const Tensor loss = ops::add(tape, ops::bce(tape, p_real, Real(1)), ops::bce(tape, p_fake, Real(0)));
  check_finite(loss.item(), "discriminator loss", opt.step);
  tape.backward(loss);
  opt_d.step(d);
  d.zero_grad();
  return loss.item();
}

double generator_step(Network& g, Network& d, int batch_size, Adam& opt_g, Rng& rng, const GanStepOptions& opt) {
  const LatentVector z = sample_latent(batch_size, rng, opt);
  g.zero_grad();
  d.zero_grad();
  Tape tape;
  const Tensor fake = g.forward(tape, z.values);
  ForwardOptions frozen;
  frozen.update_running_stats = false;
  const Tensor p = disc_prob(d, tape, fake, z.conditional_class, frozen);
  const Tensor loss = ops::bce(tape, p, Real(1));
  check_finite(loss.item(), "generator loss", opt.step);
  tape.backward(loss);
  opt_g.step(g);
  g.zero_grad();
  d.zero_grad();
  return loss.item();
}

namespace {

void classifier_update(Network& c, const HyperParams& hp, Adam& opt_c) {
  apply_weight_decay(c.parameters(), DecayPolicy{hp.weight_decay, default_decay_exempt});
  opt_c.step(c);
  c.zero_grad();
}

}  // namespace

ClassifierStepResult classifier_step(Network& c, Network& g, const Batch& real, const HyperParams& hp, Adam& opt_c,
                                     Rng& rng, const GanStepOptions& opt) {
  const LatentVector z = sample_latent(real.size(), rng, opt);
  const Tensor x_gen = generate(g, z);

  c.zero_grad();
  Tape tape;
  const Tensor sup = ops::cross_entropy(tape, c.forward(tape, real.images), real.labels);
  ForwardOptions frozen;
  frozen.update_running_stats = false;
  const Tensor logits_gen = c.forward(tape, x_gen, frozen);
  const PseudoLabelResult pl = pseudo_label(logits_gen, hp.threshold);
  const Tensor kept = ops::select_rows(tape, logits_gen, pl.kept_rows);
  const Tensor unsup = ops::cross_entropy(tape, kept, pl.kept_labels);
  const Tensor loss = ops::add(tape, sup, ops::scale(tape, unsup, hp.lambda));
  check_finite(loss.item(), "classifier loss", opt.step);
  tape.backward(loss);
  classifier_update(c, hp, opt_c);
  return ClassifierStepResult{sup.item(), unsup.item(), pl.keep_rate};
}

double supervised_step(Network& c, const Batch& real, const HyperParams& hp, Adam& opt_c, std::int64_t step) {
  c.zero_grad();
  Tape tape;
  const Tensor loss = ops::cross_entropy(tape, c.forward(tape, real.images), real.labels);
  check_finite(loss.item(), "classifier loss", step);
  tape.backward(loss);
  classifier_update(c, hp, opt_c);
  return loss.item();
}

StepMetrics shared_step(Network& sd, Network& g, const Batch& real, const HyperParams& hp, Adam& opt_sd, Adam& opt_g,
                        Rng& rng, const GanStepOptions& opt) {
  if (sd.spec().role != Role::shared_discriminator) throw ContractError("shared_step needs a shared discriminator");
  StepMetrics m;
  m.step = opt.step;
  const int b = real.size();
  const LatentVector z = sample_latent(b, rng, opt);
  const Tensor fake = generate(g, z);

  sd.zero_grad();
  Tape tape;
  const SharedOutput out_real = sd.forward_shared(tape, real.images);
  ForwardOptions frozen;
  frozen.update_running_stats = false;
  const SharedOutput out_fake = sd.forward_shared(tape, fake, frozen);
  const Tensor adv = ops::add(tape, ops::bce(tape, out_fake.prob, Real(0)), ops::bce(tape, out_real.prob, Real(1)));
  const Tensor cls = ops::cross_entropy(tape, out_real.logits, real.labels);
  Tensor loss = ops::add(tape, ops::scale(tape, adv, hp.lambda), cls);
  if (hp.shared_classify_generated) {
    const PseudoLabelResult pl = pseudo_label(out_fake.logits, hp.threshold);
    const Tensor kept = ops::select_rows(tape, out_fake.logits, pl.kept_rows);
    const Tensor unsup = ops::cross_entropy(tape, kept, pl.kept_labels);
    loss = ops::add(tape, loss, ops::scale(tape, unsup, hp.lambda));
    m.loss_c_unsup = unsup.item();
    m.keep_rate = pl.keep_rate;
  }
  check_finite(loss.item(), "shared discriminator loss", opt.step);
  tape.backward(loss);
  classifier_update(sd, hp, opt_sd);
  m.loss_d = adv.item();
  m.loss_c_sup = cls.item();
  m.loss_g = generator_step(g, sd, b, opt_g, rng, opt);
  return m;
}

// ---------------------------------------------------------------------------

std::vector<int> predict(Network& classifier, const Tensor& normalized_images) {
  const ops::Mode saved = classifier.mode();
  classifier.set_mode(ops::Mode::eval);
  std::vector<int> out;
  const int n = normalized_images.dim(0);
  constexpr int kChunk = 256;
  for (int start = 0; start < n; start += kChunk) {
    const int end = std::min(n, start + kChunk);
    std::vector<int> rows(static_cast<std::size_t>(end - start));
    for (int i = start; i < end; ++i) rows[static_cast<std::size_t>(i - start)] = i;
    Tape tape = Tape::inference();
    const Tensor x = ops::select_rows(tape, normalized_images, rows);
    const Tensor logits = classifier.forward(tape, x);
    const int k = logits.dim(1);
    for (int i = 0; i < end - start; ++i) {
      const Real* row = logits.data().data() + static_cast<std::size_t>(i) * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  classifier.set_mode(saved);
  return out;
}

double evaluate(Network& classifier, const Dataset& ds) {
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  const auto pred = predict(classifier, normalize(ds.images));
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / ds.size();
}

TrainResult train(const Dataset& train_set, const Dataset* test, const HyperParams& hp, const TrainOptions& opt,
                  const TrainCallbacks& callbacks) {
  hp.validate();
  train_set.validate();
  const Variant variant = hp.variant;
  const bool gan = variant != Variant::baseline;
  const bool conditional = variant == Variant::ecgan_conditional;

  // Independent streams: the classifier's init, shuffling and augmentation do
  // not depend on whether a GAN is trained alongside it.
  const Rng root(hp.seed);
  Rng shuffle_rng = root.fork("shuffle");
  Rng augment_rng = root.fork("augment");
  Rng latent_rng = root.fork("latent");

  NetworkSpec base;
  base.image_size = train_set.image_size();
  base.channels = train_set.channels();
  base.num_classes = train_set.num_classes;

  AdamConfig c_cfg{hp.lr_c, hp.beta1_classifier, hp.beta2, Real(1e-8)};
  AdamConfig gan_d_cfg{hp.lr_d, hp.beta1_gan, hp.beta2, Real(1e-8)};
  AdamConfig gan_g_cfg{hp.lr_g, hp.beta1_gan, hp.beta2, Real(1e-8)};

  TrainState st{Network{}, Adam(c_cfg), std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0};
  if (variant == Variant::shared) {
    NetworkSpec s = base;
    s.role = Role::shared_discriminator;
    s.base_width = opt.model.gan_width;
    Rng r = root.fork("shared-init");
    st.classifier = build_shared_discriminator(s, r);
    // The shared network is trained as a discriminator, so it uses the GAN rate.
    st.opt_c = Adam(gan_d_cfg);
  } else {
    NetworkSpec s = base;
    s.role = Role::classifier;
    s.base_width = opt.model.classifier_width;
    s.depth = opt.model.classifier_depth;
    Rng r = root.fork("classifier-init");
    st.classifier = build_classifier(s, r);
  }
  if (gan) {
    NetworkSpec gs = base;
    gs.role = Role::generator;
    gs.base_width = opt.model.gan_width;
    gs.conditional = conditional;
    Rng r = root.fork("generator-init");
    st.generator = build_generator(gs, r);
    st.opt_g = Adam(gan_g_cfg);
    if (variant != Variant::shared) {
      NetworkSpec ds = gs;
      ds.role = Role::discriminator;
      Rng rd = root.fork("discriminator-init");
      st.discriminator = build_discriminator(ds, rd);
      st.opt_d = Adam(gan_d_cfg);
    }
  }

  TrainResult result;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    BatchOptions bo;
    bo.augment = opt.augment;
    bo.augment_seed = augment_rng.next_u64();
    const auto epoch_batches = batches(train_set, hp.batch_size, shuffle_rng.next_u64(), bo);
    EpochMetrics em;
    em.epoch = epoch;
    for (const Batch& batch : epoch_batches) {
      ++st.step;
      StepMetrics m;
      m.step = st.step;
      m.epoch = epoch;
      GanStepOptions go{conditional, train_set.num_classes, st.step};
      switch (variant) {
        case Variant::baseline:
          m.loss_c_sup = supervised_step(st.classifier, batch, hp, st.opt_c, st.step);
          break;
        case Variant::ecgan:
        case Variant::ecgan_conditional: {
          m.loss_d = discriminator_step(*st.discriminator, *st.generator, batch, *st.opt_d, latent_rng, go);
          m.loss_g = generator_step(*st.generator, *st.discriminator, batch.size(), *st.opt_g, latent_rng, go);
          const auto c = classifier_step(st.classifier, *st.generator, batch, hp, st.opt_c, latent_rng, go);
          m.loss_c_sup = c.loss_sup;
          m.loss_c_unsup = c.loss_unsup;
          m.keep_rate = c.keep_rate;
          break;
        }
        case Variant::shared: {
          const StepMetrics s = shared_step(st.classifier, *st.generator, batch, hp, st.opt_c, *st.opt_g,
                                            latent_rng, go);
          m.loss_d = s.loss_d;
          m.loss_g = s.loss_g;
          m.loss_c_sup = s.loss_c_sup;
          m.loss_c_unsup = s.loss_c_unsup;
          m.keep_rate = s.keep_rate;
          break;
        }
      }
      em.loss_d += m.loss_d;
      em.loss_g += m.loss_g;
      em.loss_c_sup += m.loss_c_sup;
      em.loss_c_unsup += m.loss_c_unsup;
      em.keep_rate += m.keep_rate;
      if (callbacks.on_step) callbacks.on_step(m);
    }
    const double nb = static_cast<double>(epoch_batches.size());
    em.loss_d /= nb;
    em.loss_g /= nb;
    em.loss_c_sup /= nb;
    em.loss_c_unsup /= nb;
    em.keep_rate /= nb;
    em.train_acc = evaluate(st.classifier, train_set);
    em.test_acc = test ? evaluate(st.classifier, *test) : 0.0;
    result.history.push_back(em);
    if (callbacks.on_epoch) callbacks.on_epoch(em, st);
  }
  result.state = std::move(st);
  return result;
}

}  // namespace ecgan
