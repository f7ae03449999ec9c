#include "ecgan/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ecgan/error.hpp"
#include "json.hpp"

namespace ecgan {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were read so that leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      convert(*it, out, key);
    } catch (const json::exception&) {
      throw ConfigError("config key '" + where(key) + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
    }
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  template <class T>
  void convert(const json& v, T& out, const char* key) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("config key '" + where(key) + "' must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("config key '" + where(key) + "' must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError("config key '" + where(key) + "' must be a non-negative integer");
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("config key '" + where(key) + "' must be an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("config key '" + where(key) + "' must be a number");
      out = static_cast<T>(v.get<double>());
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array() || v.empty()) throw ConfigError("config key '" + where(key) + "' must be a non-empty array");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError("config key '" + where(key) + "' must hold numbers");
        out.push_back(e.get<double>());
      }
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!v.is_array() || v.empty()) throw ConfigError("config key '" + where(key) + "' must be a non-empty array");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number_unsigned()) throw ConfigError("config key '" + where(key) + "' must hold non-negative integers");
        out.push_back(e.get<std::uint64_t>());
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_dataset(const json& j, DatasetSource& d) {
  ObjectReader r(j, "dataset");
  r.get("source", d.kind);
  r.get("image_size", d.image_size);
  r.get("channels", d.channels);
  r.get("num_classes", d.num_classes);
  r.get("n_per_class", d.n_per_class);
  r.get("test_n_per_class", d.test_n_per_class);
  r.get("noise_sigma", d.noise_sigma);
  r.get("data_seed", d.data_seed);
  r.get("test_seed", d.test_seed);
  r.get("images", d.images);
  r.get("labels", d.labels);
  r.get("test_images", d.test_images);
  r.get("test_labels", d.test_labels);
  r.get("root", d.root);
  r.get("labels_csv", d.labels_csv);
  r.get("test_root", d.test_root);
  r.get("test_labels_csv", d.test_labels_csv);
  r.finish();
  if (d.kind != "synth" && d.kind != "idx" && d.kind != "dir") {
    throw ConfigError("config key 'dataset.source' must be one of synth|idx|dir, got '" + d.kind + "'");
  }
  if (d.kind == "idx" && (d.images.empty() || d.labels.empty() || d.test_images.empty() || d.test_labels.empty())) {
    throw ConfigError("dataset.source=idx needs images, labels, test_images and test_labels");
  }
  if (d.kind == "dir" && (d.root.empty() || d.labels_csv.empty() || d.test_root.empty() || d.test_labels_csv.empty())) {
    throw ConfigError("dataset.source=dir needs root, labels_csv, test_root and test_labels_csv");
  }
}

void parse_model(const json& j, ModelConfig& m) {
  ObjectReader r(j, "model");
  r.get("gan_width", m.gan_width);
  r.get("classifier_width", m.classifier_width);
  r.get("classifier_depth", m.classifier_depth);
  r.finish();
  if (m.gan_width < 8 || m.classifier_width < 8) throw ConfigError("model widths must be >= 8");
  if (m.classifier_depth < 1) throw ConfigError("model.classifier_depth must be >= 1");
}

void parse_augment_policy(const json& j, AugmentPolicy& a) {
  ObjectReader r(j, "augment_policy");
  r.get("crop_pad", a.crop_pad);
  r.get("rotation_deg", a.rotation_deg);
  r.finish();
  if (a.crop_pad < 0 || a.rotation_deg < 0) throw ConfigError("augment_policy values must be >= 0");
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(j, "");
  if (const json* d = r.child("dataset")) parse_dataset(*d, c.dataset);
  std::string variant(variant_name(c.variant));
  r.get("variant", variant);
  c.variant = parse_variant(variant);
  c.hp.variant = c.variant;
  r.get("lambda", c.hp.lambda);
  r.get("threshold", c.hp.threshold);
  r.get("lr_g", c.hp.lr_g);
  r.get("lr_d", c.hp.lr_d);
  r.get("lr_c", c.hp.lr_c);
  r.get("weight_decay", c.hp.weight_decay);
  r.get("batch_size", c.hp.batch_size);
  r.get("epochs", c.hp.epochs);
  r.get("beta1_gan", c.hp.beta1_gan);
  r.get("beta1_classifier", c.hp.beta1_classifier);
  r.get("beta2", c.hp.beta2);
  r.get("shared_classify_generated", c.hp.shared_classify_generated);
  if (const json* m = r.child("model")) parse_model(*m, c.model);
  r.get("dataset_percent", c.dataset_percent);
  r.get("lambda_values", c.lambda_values);
  std::uint64_t seed = 0;
  bool has_seed = j.contains("seed");
  r.get("seed", seed);
  r.get("seeds", c.seeds);
  if (has_seed) {
    if (j.contains("seeds")) throw ConfigError("config keys 'seed' and 'seeds' are mutually exclusive");
    c.seeds = {seed};
  }
  c.hp.seed = c.seeds.front();
  if (const json* sv = r.child("sweep_variants")) {
    if (!sv->is_array() || sv->empty()) throw ConfigError("config key 'sweep_variants' must be a non-empty array");
    c.sweep_variants.clear();
    for (const auto& v : *sv) {
      if (!v.is_string()) throw ConfigError("config key 'sweep_variants' must hold strings");
      c.sweep_variants.push_back(parse_variant(v.get<std::string>()));
    }
  }
  r.get("augment", c.augment);
  if (const json* a = r.child("augment_policy")) parse_augment_policy(*a, c.augment_policy);
  c.augment_policy.enabled = c.augment;
  r.get("weight_decay_enabled", c.weight_decay_enabled);
  r.get("write_checkpoints", c.write_checkpoints);
  r.get("output_dir", c.output_dir);
  r.finish();

  for (double p : c.dataset_percent) {
    if (!(p > 0 && p <= 100)) throw ConfigError("config key 'dataset_percent' values must be in (0,100]");
  }
  for (double l : c.lambda_values) {
    if (!(l >= 0)) throw ConfigError("config key 'lambda_values' values must be >= 0");
  }
  try {
    c.hp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid hyperparameter: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

// Shortest decimal that reads back as the same Real, so 0.1f prints as 0.1.
double shortest(Real v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  double out = 0;
  std::from_chars(buf, end, out);
  return out;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) {
  json d = {{"source", c.dataset.kind},
            {"image_size", c.dataset.image_size},
            {"channels", c.dataset.channels},
            {"num_classes", c.dataset.num_classes},
            {"n_per_class", c.dataset.n_per_class},
            {"test_n_per_class", c.dataset.test_n_per_class},
            {"noise_sigma", c.dataset.noise_sigma},
            {"data_seed", c.dataset.data_seed},
            {"test_seed", c.dataset.test_seed}};
  if (c.dataset.kind == "idx") {
    d["images"] = c.dataset.images;
    d["labels"] = c.dataset.labels;
    d["test_images"] = c.dataset.test_images;
    d["test_labels"] = c.dataset.test_labels;
  } else if (c.dataset.kind == "dir") {
    d["root"] = c.dataset.root;
    d["labels_csv"] = c.dataset.labels_csv;
    d["test_root"] = c.dataset.test_root;
    d["test_labels_csv"] = c.dataset.test_labels_csv;
  }
  json variants = json::array();
  for (Variant v : c.sweep_variants) variants.push_back(std::string(variant_name(v)));
  json j = {{"dataset", d},
            {"variant", std::string(variant_name(c.variant))},
            {"lambda", shortest(c.hp.lambda)},
            {"threshold", shortest(c.hp.threshold)},
            {"lr_g", shortest(c.hp.lr_g)},
            {"lr_d", shortest(c.hp.lr_d)},
            {"lr_c", shortest(c.hp.lr_c)},
            {"weight_decay", shortest(c.hp.weight_decay)},
            {"batch_size", c.hp.batch_size},
            {"epochs", c.hp.epochs},
            {"beta1_gan", shortest(c.hp.beta1_gan)},
            {"beta1_classifier", shortest(c.hp.beta1_classifier)},
            {"beta2", shortest(c.hp.beta2)},
            {"shared_classify_generated", c.hp.shared_classify_generated},
            {"model",
             {{"gan_width", c.model.gan_width},
              {"classifier_width", c.model.classifier_width},
              {"classifier_depth", c.model.classifier_depth}}},
            {"dataset_percent", c.dataset_percent},
            {"lambda_values", c.lambda_values},
            {"seeds", c.seeds},
            {"sweep_variants", variants},
            {"augment", c.augment},
            {"augment_policy", {{"crop_pad", c.augment_policy.crop_pad}, {"rotation_deg", c.augment_policy.rotation_deg}}},
            {"weight_decay_enabled", c.weight_decay_enabled},
            {"write_checkpoints", c.write_checkpoints},
            {"output_dir", c.output_dir}};
  return j.dump(2) + "\n";
}

void apply_seed_override(ExperimentConfig& cfg, std::optional<std::uint64_t> flag_seed) {
  std::optional<std::uint64_t> seed = flag_seed;
  if (!seed) {
    if (const char* env = std::getenv("ECGAN_SEED"); env && *env) {
      std::uint64_t v = 0;
      const std::string_view s(env);
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("ECGAN_SEED must be a non-negative integer, got '" + std::string(s) + "'");
      }
      seed = v;
    }
  }
  if (seed) {
    cfg.seeds = {*seed};
    cfg.hp.seed = *seed;
  }
}

LoadedData load_data(const DatasetSource& src) {
  LoadedData d;
  const ResizeOptions resize{src.image_size, src.channels};
  if (src.kind == "synth") {
    SynthOptions o;
    o.num_classes = src.num_classes;
    o.image_size = src.image_size;
    o.channels = src.channels;
    o.noise_sigma = src.noise_sigma;
    o.n_per_class = src.n_per_class;
    o.seed = src.data_seed;
    d.train = synth_shapes(o);
    o.n_per_class = src.test_n_per_class;
    o.seed = src.test_seed;
    d.test = synth_shapes(o);
  } else if (src.kind == "idx") {
    d.train = load_idx(src.images, src.labels, resize);
    d.test = load_idx(src.test_images, src.test_labels, resize);
  } else if (src.kind == "dir") {
    d.train = load_image_dir(src.root, src.labels_csv, resize);
    d.test = load_image_dir(src.test_root, src.test_labels_csv, resize);
  } else {
    throw ConfigError("unknown dataset source '" + src.kind + "'");
  }
  const int k = std::max(d.train.num_classes, d.test.num_classes);
  d.train.num_classes = d.test.num_classes = k;
  return d;
}

}  // namespace ecgan
