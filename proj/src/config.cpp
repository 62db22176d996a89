#include "config.hpp"

#include <set>

#include "errors.hpp"
#include "io.hpp"
#include "nn_json.hpp"

namespace soiguard {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

json section(const json& j, const char* key) {
  return j.contains(key) ? j.at(key) : json::object();
}

}  // namespace

TrainConfig train_from_json(const json& j, const TrainConfig& d) {
  TrainConfig t = d;
  t.epochs = j.value("epochs", d.epochs);
  t.lr = j.value("lr", d.lr);
  t.batch_size = j.value("batch_size", d.batch_size);
  t.seed = j.value("seed", d.seed);
  validate_train(t);
  return t;
}

json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"lr", t.lr}, {"batch_size", t.batch_size}, {"seed", t.seed}};
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    check_keys(j,
               {"dataset", "model", "seeds", "pretrain", "surrogate", "phase1", "phase2", "lut",
                "eval", "xbar", "energy", "sweep", "output_dir"},
               "config");
    ExperimentConfig c;
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };

    const auto ds = section(j, "dataset");
    check_keys(ds, {"name", "dir", "n_train", "n_test", "classes", "synthetic"}, "dataset");
    c.dataset.name = ds.value("name", std::string("mnist"));
    if (ds.contains("dir") && !ds["dir"].get<std::string>().empty()) c.dataset.dir = resolve(ds["dir"].get<std::string>());
    c.dataset.n_train = ds.value("n_train", std::size_t{0});
    c.dataset.n_test = ds.value("n_test", std::size_t{0});
    c.dataset.classes = ds.value("classes", std::vector<int>{});
    if (ds.contains("synthetic")) {
      const auto& s = ds["synthetic"];
      check_keys(s, {"classes", "channels", "size", "n_train", "n_test", "noise"}, "dataset.synthetic");
      auto& so = c.dataset.synthetic;
      so.classes = s.value("classes", so.classes);
      so.channels = s.value("channels", so.channels);
      so.size = s.value("size", so.size);
      so.n_train = s.value("n_train", so.n_train);
      so.n_test = s.value("n_test", so.n_test);
      so.noise = s.value("noise", so.noise);
    }
    if (c.dataset.name != "synthetic" && c.dataset.dir.empty()) {
      throw ConfigError("dataset.dir is required for dataset '" + c.dataset.name + "'");
    }

    const auto md = section(j, "model");
    check_keys(md, {"layers", "quant_bits"}, "model");
    c.model.quant_bits = md.value("quant_bits", 8);
    if (c.model.quant_bits != 0 && (c.model.quant_bits < 2 || c.model.quant_bits > 16)) {
      throw ConfigError("model.quant_bits must be 0 or in [2,16]");
    }
    if (md.contains("layers")) {
      for (const auto& l : md["layers"]) c.model.layers.push_back(layer_from_json(l));
    }

    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("seeds must be non-empty");

    for (const char* key : {"pretrain", "surrogate"}) {
      check_keys(section(j, key), {"epochs", "lr", "batch_size", "seed"}, key);
    }
    c.pretrain = train_from_json(section(j, "pretrain"), c.pretrain);
    c.surrogate = train_from_json(section(j, "surrogate"), c.surrogate);

    const auto p1 = section(j, "phase1");
    check_keys(p1, {"lambda_c", "lambda_a", "beta", "epochs", "lr", "batch_size", "seed", "attack"}, "phase1");
    c.phase1.lambda_c = p1.value("lambda_c", c.phase1.lambda_c);
    c.phase1.lambda_a = p1.value("lambda_a", c.phase1.lambda_a);
    c.phase1.beta = p1.value("beta", c.phase1.beta);
    c.phase1.train = train_from_json(p1, TrainConfig{8, 20.0, 32, 0});
    if (p1.contains("attack")) c.phase1.attack = attack_from_json(p1["attack"]);
    validate_phase1(c.phase1);

    const auto p2 = section(j, "phase2");
    check_keys(p2, {"epochs", "lr", "batch_size", "seed", "attack"}, "phase2");
    c.phase2.train = train_from_json(p2, TrainConfig{3, 0.05, 32, 0});
    if (p2.contains("attack")) c.phase2.attack = attack_from_json(p2["attack"]);

    const auto lt = section(j, "lut");
    check_keys(lt, {"bins", "smoothing", "attack"}, "lut");
    c.lut.bins = lt.value("bins", c.lut.bins);
    c.lut.smoothing = lt.value("smoothing", c.lut.smoothing);
    if (lt.contains("attack")) c.lut.attack = attack_from_json(lt["attack"]);
    if (c.lut.bins < 8) throw ConfigError("lut.bins must be >= 8");

    const auto ev = section(j, "eval");
    check_keys(ev, {"attacks", "modes", "stochastic_repeats", "calib_samples", "eval_samples", "plot_bins"},
               "eval");
    if (ev.contains("attacks")) {
      for (const auto& a : ev["attacks"]) c.eval.attacks.push_back(attack_from_json(a));
    } else {
      c.eval.attacks = {make_pgd("16/255", "8/255", 10, 11), make_pgd("3/255", "0.5/255", 10, 12)};
    }
    if (ev.contains("modes")) {
      c.eval.modes.clear();
      for (const auto& m : ev["modes"]) c.eval.modes.push_back(mode_from_name(m.get<std::string>()));
    }
    if (c.eval.modes.empty()) throw ConfigError("eval.modes must be non-empty");
    c.eval.stochastic_repeats = ev.value("stochastic_repeats", c.eval.stochastic_repeats);
    c.eval.calib_samples = ev.value("calib_samples", c.eval.calib_samples);
    c.eval.eval_samples = ev.value("eval_samples", c.eval.eval_samples);
    c.eval.plot_bins = ev.value("plot_bins", c.eval.plot_bins);
    if (c.eval.calib_samples == 0 || c.eval.eval_samples == 0) {
      throw ConfigError("eval.calib_samples and eval.eval_samples must be > 0");
    }

    const auto xb = section(j, "xbar");
    check_keys(xb, {"crossbar", "attacks"}, "xbar");
    c.xbar.crossbar = crossbar_from_json(section(xb, "crossbar"));
    if (xb.contains("attacks")) {
      for (const auto& a : xb["attacks"]) c.xbar.attacks.push_back(attack_from_json(a));
    }

    const auto en = section(j, "energy");
    check_keys(en, {"components", "out_hw", "n_x"}, "energy");
    c.energy.energies = energies_from_json(section(en, "components"));
    if (en.contains("out_hw")) {
      const auto hw = en["out_hw"].get<std::vector<std::size_t>>();
      if (hw.size() != 2) throw ConfigError("energy.out_hw must be [H, W]");
      c.energy.out_hw = std::make_pair(hw[0], hw[1]);
    }
    if (en.contains("n_x")) c.energy.n_x = en["n_x"].get<std::size_t>();

    if (j.contains("sweep")) {
      const auto& sw = j["sweep"];
      check_keys(sw, {"axis", "values"}, "sweep");
      c.sweep = SweepConfig{sw.at("axis").get<std::string>(), {}};
      for (const auto& v : sw.at("values")) c.sweep->values.push_back(v);
    }

    if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"].get<std::string>());
    c.source = config_to_json(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

json config_to_json(const ExperimentConfig& c) {
  json ds{{"name", c.dataset.name},
          {"dir", c.dataset.dir.string()},
          {"n_train", c.dataset.n_train},
          {"n_test", c.dataset.n_test},
          {"classes", c.dataset.classes}};
  if (c.dataset.name == "synthetic") {
    const auto& s = c.dataset.synthetic;
    ds["synthetic"] = {{"classes", s.classes}, {"channels", s.channels}, {"size", s.size},
                       {"n_train", s.n_train}, {"n_test", s.n_test},     {"noise", s.noise}};
  }
  json layers = json::array();
  for (const auto& l : c.model.layers) layers.push_back(layer_to_json(l));
  json p1 = train_to_json(c.phase1.train);
  p1["lambda_c"] = c.phase1.lambda_c;
  p1["lambda_a"] = c.phase1.lambda_a;
  p1["beta"] = c.phase1.beta;
  p1["attack"] = attack_to_json(c.phase1.attack);
  json p2 = train_to_json(c.phase2.train);
  p2["attack"] = attack_to_json(c.phase2.attack);
  json eval_attacks = json::array();
  for (const auto& a : c.eval.attacks) eval_attacks.push_back(attack_to_json(a));
  json modes = json::array();
  for (auto m : c.eval.modes) modes.push_back(mode_name(m));
  json xb_attacks = json::array();
  for (const auto& a : c.xbar.attacks) xb_attacks.push_back(attack_to_json(a));
  json energy{{"components", energies_to_json(c.energy.energies)}};
  if (c.energy.out_hw) energy["out_hw"] = {c.energy.out_hw->first, c.energy.out_hw->second};
  if (c.energy.n_x) energy["n_x"] = *c.energy.n_x;
  json out{{"dataset", ds},
           {"model", {{"layers", layers}, {"quant_bits", c.model.quant_bits}}},
           {"seeds", c.seeds},
           {"pretrain", train_to_json(c.pretrain)},
           {"surrogate", train_to_json(c.surrogate)},
           {"phase1", p1},
           {"phase2", p2},
           {"lut", {{"bins", c.lut.bins}, {"smoothing", c.lut.smoothing}, {"attack", attack_to_json(c.lut.attack)}}},
           {"eval",
            {{"attacks", eval_attacks},
             {"modes", modes},
             {"stochastic_repeats", c.eval.stochastic_repeats},
             {"calib_samples", c.eval.calib_samples},
             {"eval_samples", c.eval.eval_samples},
             {"plot_bins", c.eval.plot_bins}}},
           {"xbar", {{"crossbar", crossbar_to_json(c.xbar.crossbar)}, {"attacks", xb_attacks}}},
           {"energy", energy},
           {"output_dir", c.output_dir.string()}};
  // A preset crossbar carries its sigma implicitly.
  if (c.xbar.crossbar.device_preset != "custom") out["xbar"]["crossbar"].erase("variation_sigma");
  if (c.sweep) out["sweep"] = {{"axis", c.sweep->axis}, {"values", c.sweep->values}};
  return out;
}

std::string json_hash(const nlohmann::json& j) { return fnv1a64_hex(j.dump()); }

std::string config_hash(const ExperimentConfig& cfg) {
  auto j = config_to_json(cfg);
  j.erase("output_dir");
  return json_hash(j);
}

}  // namespace soiguard
