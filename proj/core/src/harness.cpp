#include "ecgan/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ecgan/checkpoint.hpp"
#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"

namespace ecgan {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Maps an exception to an exit code and a single diagnostic line.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: config: " << one_line(e.what()) << "\n";
    return kExitConfig;
  } catch (const DivergedError& e) {
    err << "error: training diverged: " << one_line(e.what()) << "\n";
    return kExitDiverged;
  } catch (const FormatError& e) {
    err << "error: format: " << one_line(e.what()) << "\n";
    return kExitData;
  } catch (const InvalidLabelError& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kExitData;
  } catch (const UnderflowError& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kExitData;
  } catch (const ContractError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitContract;
  } catch (const SpecError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitOther;
  }
}

HyperParams cell_params(const ExperimentConfig& cfg, const Cell& cell) {
  HyperParams hp = cfg.hp;
  hp.variant = cell.variant;
  hp.lambda = static_cast<Real>(cell.lambda);
  hp.seed = cell.seed;
  if (!cell.weight_decay) hp.weight_decay = 0;
  return hp;
}

std::string strategy_label(bool augment, bool decay) {
  if (augment && decay) return "augment+decay";
  if (augment) return "augment";
  if (decay) return "decay";
  return "none";
}

}  // namespace

SweepAxis parse_axis(std::string_view name) {
  if (name == "percent") return SweepAxis::percent;
  if (name == "lambda") return SweepAxis::lambda;
  if (name == "strategy") return SweepAxis::strategy;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected percent|lambda|strategy)");
}

std::string_view axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::percent: return "percent";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::strategy: return "strategy";
  }
  return "?";
}

std::string metrics_header() {
  return "run_id,variant,percent,lambda,seed,epoch,loss_d,loss_g,loss_c_sup,loss_c_unsup,keep_rate,train_acc,test_acc";
}

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream s;
  s << r.run_id << ',' << variant_name(r.variant) << ',' << num(r.percent) << ',' << num(r.lambda) << ',' << r.seed
    << ',' << r.m.epoch << ',' << fixed(r.m.loss_d) << ',' << fixed(r.m.loss_g) << ',' << fixed(r.m.loss_c_sup) << ','
    << fixed(r.m.loss_c_unsup) << ',' << fixed(r.m.keep_rate) << ',' << fixed(r.m.train_acc) << ','
    << fixed(r.m.test_acc);
  return s.str();
}

std::string Cell::run_id() const {
  std::string id = std::string(variant_name(variant)) + "_p" + num(percent) + "_l" + num(lambda) + "_s" +
                   std::to_string(seed);
  if (!strategy.empty()) id += "_" + strategy;
  return id;
}

double CellResult::final_test_acc() const { return history.empty() ? 0.0 : history.back().test_acc; }

CellResult run_cell(const ExperimentConfig& cfg, const Cell& cell, const LoadedData& data, std::ostream* metrics,
                    const fs::path& ckpt_dir) {
  const HyperParams hp = cell_params(cfg, cell);
  const Dataset train_set = cell.percent >= 100.0 ? data.train : subsample(data.train, cell.percent, cell.seed);
  TrainOptions opt;
  opt.model = cfg.model;
  opt.augment = cfg.augment_policy;
  opt.augment.enabled = cell.augment;

  if (!ckpt_dir.empty()) fs::create_directories(ckpt_dir);
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochMetrics& em, const TrainState& st) {
    if (metrics) {
      *metrics << format_metrics_row({cell.run_id(), cell.variant, cell.percent, cell.lambda, cell.seed, em}) << "\n";
      metrics->flush();
    }
    if (!ckpt_dir.empty()) {
      save_checkpoint(ckpt_dir / "classifier.ckpt", st.classifier, &st.opt_c);
      if (st.generator) save_checkpoint(ckpt_dir / "generator.ckpt", *st.generator, &*st.opt_g);
      if (st.discriminator) save_checkpoint(ckpt_dir / "discriminator.ckpt", *st.discriminator, &*st.opt_d);
    }
  };
  TrainResult r = train(train_set, &data.test, hp, opt, cb);
  return CellResult{cell, std::move(r.history)};
}

std::vector<Cell> sweep_cells(const ExperimentConfig& cfg, SweepAxis axis) {
  std::vector<Cell> cells;
  const double lambda0 = cfg.hp.lambda;
  const double percent0 = cfg.dataset_percent.front();
  auto add = [&](Cell c) {
    for (std::uint64_t seed : cfg.seeds) {
      for (Variant v : cfg.sweep_variants) {
        Cell x = c;
        x.seed = seed;
        x.variant = v;
        cells.push_back(x);
      }
    }
  };
  Cell base;
  base.percent = percent0;
  base.lambda = lambda0;
  base.augment = cfg.augment;
  base.weight_decay = cfg.weight_decay_enabled;
  switch (axis) {
    case SweepAxis::percent:
      for (double p : cfg.dataset_percent) {
        Cell c = base;
        c.percent = p;
        add(c);
      }
      break;
    case SweepAxis::lambda:
      for (double l : cfg.lambda_values) {
        Cell c = base;
        c.lambda = l;
        add(c);
      }
      break;
    case SweepAxis::strategy:
      for (bool aug : {false, true}) {
        for (bool decay : {false, true}) {
          Cell c = base;
          c.augment = aug;
          c.weight_decay = decay;
          c.strategy = strategy_label(aug, decay);
          add(c);
        }
      }
      break;
  }
  return cells;
}

std::string axis_value(const Cell& cell, SweepAxis axis) {
  switch (axis) {
    case SweepAxis::percent: return num(cell.percent);
    case SweepAxis::lambda: return num(cell.lambda);
    case SweepAxis::strategy: return cell.strategy;
  }
  return "";
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& results, SweepAxis axis) {
  std::vector<std::pair<std::string, Variant>> order;
  std::map<std::pair<std::string, Variant>, std::vector<double>> groups;
  for (const auto& r : results) {
    auto key = std::make_pair(axis_value(r.cell, axis), r.cell.variant);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r.final_test_acc());
  }
  std::vector<SummaryRow> rows;
  for (const auto& key : order) {
    const auto& v = groups[key];
    SummaryRow s;
    s.axis_value = key.first;
    s.variant = key.second;
    s.n_seeds = static_cast<int>(v.size());
    double sum = 0;
    for (double a : v) sum += a;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0;
      for (double a : v) ss += (a - s.mean) * (a - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    rows.push_back(s);
  }
  return rows;
}

PnmImage tile_grid(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("tile_grid expects NCHW, got " + shape_str(images.shape()));
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != 1 && c != 3) throw ShapeError("tile_grid needs 1 or 3 channels, got " + std::to_string(c));
  const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
  const int rows = std::max(1, (n + cols - 1) / cols);
  PnmImage img;
  img.width = cols * w;
  img.height = rows * h;
  img.channels = c;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * c, 0);
  auto src = images.data();
  for (int i = 0; i < n; ++i) {
    const int ty = i / cols, tx = i % cols;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double v = src[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
          const double u = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
          const std::size_t px = static_cast<std::size_t>(ty * h + y) * img.width + static_cast<std::size_t>(tx * w + x);
          img.pixels[px * c + ch] = static_cast<std::uint8_t>(std::lround(u * 255.0));
        }
  }
  return img;
}

Tensor sample_generator(Network& generator, int n, std::optional<int> cls, Rng& rng) {
  const NetworkSpec& spec = generator.spec();
  if (spec.role != Role::generator) {
    throw ContractError("checkpoint holds a " + std::string(role_name(spec.role)) + ", not a generator");
  }
  if (n < 1) throw ContractError("--n must be >= 1");
  if (cls && !spec.conditional) throw ContractError("--class given but the generator is not conditional");
  if (cls && (*cls < 0 || *cls >= spec.num_classes)) {
    throw ContractError("--class " + std::to_string(*cls) + " out of range [0," + std::to_string(spec.num_classes) +
                        ")");
  }
  Tensor z;
  if (spec.conditional) {
    std::vector<int> labels = cls ? std::vector<int>(static_cast<std::size_t>(n), *cls) : balanced_labels(n, spec.num_classes);
    z = conditional_latent(labels, spec.num_classes, rng).values;
  } else {
    z = latent(n, rng).values;
  }
  const ops::Mode prev = generator.mode();
  generator.set_mode(ops::Mode::eval);
  Tape tape = Tape::inference();
  Tensor out = generator.forward(tape, z);
  generator.set_mode(prev);
  return out.detach();
}

Dataset load_eval_data(std::string_view args, const NetworkSpec& spec) {
  const auto colon = args.find(':');
  const std::string kind(args.substr(0, colon));
  std::map<std::string, std::string> kv;
  if (colon != std::string_view::npos) {
    std::string rest(args.substr(colon + 1));
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("--data entry '" + item + "' is not key=value");
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
  }
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto to_int = [&](const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("--data key '" + key + "' must be an integer, got '" + v + "'");
    }
  };
  const ResizeOptions resize{spec.image_size, spec.channels};
  Dataset ds;
  if (kind == "synth") {
    SynthOptions o;
    o.num_classes = spec.num_classes;
    o.image_size = spec.image_size;
    o.channels = spec.channels;
    DatasetSource defaults;
    o.n_per_class = defaults.n_per_class;
    o.noise_sigma = defaults.noise_sigma;
    o.seed = defaults.data_seed;
    if (auto v = take("k")) o.num_classes = static_cast<int>(to_int("k", *v));
    if (auto v = take("n")) o.n_per_class = static_cast<int>(to_int("n", *v));
    if (auto v = take("size")) o.image_size = static_cast<int>(to_int("size", *v));
    if (auto v = take("channels")) o.channels = static_cast<int>(to_int("channels", *v));
    if (auto v = take("seed")) o.seed = static_cast<std::uint64_t>(to_int("seed", *v));
    if (auto v = take("noise")) {
      try {
        o.noise_sigma = std::stod(*v);
      } catch (const std::exception&) {
        throw ConfigError("--data key 'noise' must be a number, got '" + *v + "'");
      }
    }
    if (!kv.empty()) throw ConfigError("unknown --data key '" + kv.begin()->first + "' for synth");
    ds = synth_shapes(o);
  } else if (kind == "idx") {
    auto images = take("images"), labels = take("labels");
    if (!images || !labels) throw ConfigError("--data idx needs images= and labels=");
    if (!kv.empty()) throw ConfigError("unknown --data key '" + kv.begin()->first + "' for idx");
    ds = load_idx(*images, *labels, resize);
  } else if (kind == "dir") {
    auto root = take("root"), csv = take("csv");
    if (!root || !csv) throw ConfigError("--data dir needs root= and csv=");
    if (!kv.empty()) throw ConfigError("unknown --data key '" + kv.begin()->first + "' for dir");
    ds = load_image_dir(*root, *csv, resize);
  } else {
    throw ConfigError("--data source must be synth|idx|dir, got '" + kind + "'");
  }
  if (ds.image_size() != spec.image_size || ds.channels() != spec.channels) {
    throw ContractError("data is " + std::to_string(ds.channels()) + "x" + std::to_string(ds.image_size()) +
                        "px but the checkpoint expects " + std::to_string(spec.channels) + "x" +
                        std::to_string(spec.image_size) + "px");
  }
  for (int l : ds.labels) {
    if (l >= spec.num_classes) {
      throw InvalidLabelError("label " + std::to_string(l) + " >= checkpoint classes " +
                              std::to_string(spec.num_classes));
    }
  }
  return ds;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = load_config(config_path);
    apply_seed_override(cfg, seed);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    write_text(dir / "run.json", config_to_json(cfg));
    const LoadedData data = load_data(cfg.dataset);
    std::ofstream metrics = open_csv(dir / "metrics.csv");
    metrics << metrics_header() << "\n";
    for (double p : cfg.dataset_percent) {
      for (std::uint64_t s : cfg.seeds) {
        Cell cell;
        cell.variant = cfg.variant;
        cell.percent = p;
        cell.lambda = cfg.hp.lambda;
        cell.seed = s;
        cell.augment = cfg.augment;
        cell.weight_decay = cfg.weight_decay_enabled;
        const fs::path ck = cfg.write_checkpoints ? dir / "checkpoints" / cell.run_id() : fs::path();
        const CellResult r = run_cell(cfg, cell, data, &metrics, ck);
        out << cell.run_id() << " test_acc=" << fixed(r.final_test_acc(), 4) << "\n";
      }
    }
    return kExitOk;
  });
}

int cmd_sweep(const std::string& config_path, std::string_view axis_str, std::optional<std::uint64_t> seed,
              std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const SweepAxis axis = parse_axis(axis_str);
    ExperimentConfig cfg = load_config(config_path);
    apply_seed_override(cfg, seed);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    write_text(dir / "run.json", config_to_json(cfg));
    const LoadedData data = load_data(cfg.dataset);
    std::ofstream metrics = open_csv(dir / "metrics.csv");
    metrics << metrics_header() << "\n";

    std::vector<CellResult> results;
    std::map<std::string, std::vector<EpochMetrics>> baseline_cache;
    for (const Cell& cell : sweep_cells(cfg, axis)) {
      // The baseline ignores lambda; a lambda sweep reuses one run per seed.
      if (axis == SweepAxis::lambda && cell.variant == Variant::baseline) {
        Cell key = cell;
        key.lambda = 0;
        const std::string id = key.run_id();
        if (auto it = baseline_cache.find(id); it != baseline_cache.end()) {
          for (const auto& em : it->second) {
            metrics << format_metrics_row({cell.run_id(), cell.variant, cell.percent, cell.lambda, cell.seed, em})
                    << "\n";
          }
          results.push_back({cell, it->second});
          continue;
        }
      }
      const fs::path cell_dir = dir / "cells" / cell.run_id();
      fs::create_directories(cell_dir);
      std::ofstream cell_metrics = open_csv(cell_dir / "metrics.csv");
      cell_metrics << metrics_header() << "\n";
      CellResult r = run_cell(cfg, cell, data, &cell_metrics, cfg.write_checkpoints ? cell_dir : fs::path());
      for (const auto& em : r.history) {
        metrics << format_metrics_row({cell.run_id(), cell.variant, cell.percent, cell.lambda, cell.seed, em}) << "\n";
      }
      metrics.flush();
      if (axis == SweepAxis::lambda && cell.variant == Variant::baseline) {
        Cell key = cell;
        key.lambda = 0;
        baseline_cache[key.run_id()] = r.history;
      }
      out << cell.run_id() << " test_acc=" << fixed(r.final_test_acc(), 4) << "\n";
      results.push_back(std::move(r));
    }

    std::ofstream summary = open_csv(dir / "sweep_summary.csv");
    summary << "axis,value,variant,n_seeds,mean_test_acc,std_test_acc\n";
    for (const auto& s : summarize(results, axis)) {
      summary << axis_name(axis) << ',' << s.axis_value << ',' << variant_name(s.variant) << ',' << s.n_seeds << ','
              << fixed(s.mean) << ',' << fixed(s.stddev) << "\n";
    }
    return kExitOk;
  });
}

int cmd_generate(const std::string& checkpoint, int n, std::optional<int> cls, const std::string& out_path,
                 std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Checkpoint ck = load_checkpoint(checkpoint);
    ExperimentConfig seed_holder;
    apply_seed_override(seed_holder, seed);
    Rng rng = Rng(seed_holder.seeds.front()).fork("latent");
    const Tensor images = sample_generator(ck.network, n, cls, rng);
    const PnmImage grid = tile_grid(images);
    write_pnm(fs::path(out_path), grid);
    out << "wrote " << out_path << " (" << grid.width << "x" << grid.height << ", " << n << " images)\n";
    return kExitOk;
  });
}

int cmd_eval(const std::string& checkpoint, std::string_view data_args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Checkpoint ck = load_checkpoint(checkpoint);
    const Role role = ck.network.spec().role;
    if (role != Role::classifier && role != Role::shared_discriminator) {
      throw ContractError("checkpoint holds a " + std::string(role_name(role)) + ", not a classifier");
    }
    const Dataset ds = load_eval_data(data_args, ck.network.spec());
    const double acc = evaluate(ck.network, ds);
    char buf[32];
    std::snprintf(buf, sizeof buf, "accuracy=%.4f", acc);
    out << buf << "\n";
    return kExitOk;
  });
}

}  // namespace ecgan
