#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "thlm/checkpoint.hpp"
#include "thlm/downstream.hpp"
#include "thlm/graph.hpp"
#include "thlm/log.hpp"
#include "thlm/pretrain.hpp"
#include "thlm/synth.hpp"
#include "thlm/textseq.hpp"

namespace thlm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop.store(true); }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

// key=value overrides; the value is parsed as JSON when possible.
void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    cfg[key] = value;
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_csv(s)) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed \"" + item + "\"");
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

// ---------------------------------------------------------------- dataset directory

struct Dataset {
  fs::path dir;
  TahGraph graph;
  std::vector<std::string> rich_types;
};

std::vector<std::string> read_rich_types(const fs::path& dir) {
  const fs::path meta = dir / "dataset.json";
  if (!fs::exists(meta)) throw ConfigError(dir.string() + ": missing dataset.json (run synth or ingest first)");
  return read_json(meta).at("rich_text_types").get<std::vector<std::string>>();
}

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.dir = dir;
  d.rich_types = read_rich_types(dir);
  d.graph = load_graph(dir / "nodes.jsonl", dir / "edges.jsonl", d.rich_types);
  return d;
}

Vocab dataset_vocab(const Dataset& d, int min_freq) {
  const fs::path p = d.dir / "vocab.txt";
  if (fs::exists(p)) return Vocab::load(p);
  return build_vocab(d.graph, min_freq);
}

PretrainConfig load_pretrain_config(const std::string& path, const std::vector<std::string>& sets) {
  json j = path.empty() ? json::object() : read_json(path);
  apply_overrides(j, sets);
  PretrainConfig cfg = j.get<PretrainConfig>();
  cfg.check();
  return cfg;
}

HeaderConfig load_header_config(const std::string& path, const std::string& header) {
  json j = path.empty() ? json::object() : read_json(path);
  if (!header.empty()) j["header"] = header;
  try {
    return j.get<HeaderConfig>();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("header config: ") + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

// ---------------------------------------------------------------- pipeline pieces

struct PretrainOutcome {
  ModelState model;
  TrainTrace trace;
};

PretrainOutcome run_pretrain(const Dataset& d, const Vocab& v, const PretrainConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  Pretrainer trainer(d.graph, v, cfg);
  std::ofstream trace_file(out / "trace.jsonl", std::ios::binary | std::ios::trunc);
  TrainTrace trace = trainer.run(&g_stop, [&](const StepRecord& r) {
    TrainTrace one;
    one.steps.push_back(r);
    write_trace_jsonl(trace_file, one);
    trace_file.flush();
  });
  json extra = {{"pretrain", cfg},
                {"vocab_size", v.size()},
                {"graph", {{"nodes", d.graph.num_nodes()}, {"edges", d.graph.num_edges()}}},
                {"steps", trainer.step()},
                {"partial", trace.interrupted}};
  save_checkpoint(out / "checkpoint.bin", trainer.model(), extra);
  write_json(out / "config.json", cfg);
  json summary = {{"steps", trainer.step()},
                  {"parameters", trace.parameter_count},
                  {"skipped_anchors", trace.skipped_anchors},
                  {"final_checksum", hex64(trace.final_checksum)},
                  {"wall_seconds", trace.wall_seconds},
                  {"interrupted", trace.interrupted}};
  write_json(out / "summary.json", summary);
  if (trace.interrupted) log_warning("pretraining interrupted; partial checkpoint written");
  return {trainer.model().clone(), std::move(trace)};
}

EmbeddingTable embed_with(const ModelState& m, const Dataset& d, const Vocab& v, const PretrainConfig& cfg,
                          std::uint64_t seed, const std::string& provenance) {
  return export_embeddings(m, d.graph, v, EmbedOptions{cfg.k_neighbors, cfg.max_len, cfg.aug_mode, seed}, provenance);
}

std::vector<std::pair<std::string, std::vector<std::string>>> dataset_labels(const Dataset& d, const std::string& path) {
  const fs::path p = path.empty() ? d.dir / "labels.jsonl" : fs::path(path);
  return read_label_file(p);
}

RelId pick_relation(const TahGraph& g, const std::string& name) {
  if (name.empty()) {
    if (g.num_relations() == 0) throw ConfigError("graph has no relations");
    return 0;
  }
  const auto r = g.rel_id(name);
  if (!r) throw ConfigError("unknown relation \"" + name + "\"");
  return *r;
}

// Per-seed reports plus their mean; returns the mean.
MetricReport eval_link(const EmbeddingTable& emb, const Dataset& d, RelId rel, const HeaderConfig& hc,
                       const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  std::vector<MetricReport> reports;
  for (std::uint64_t s : seeds) {
    const LinkSplit split = make_link_split(d.graph, rel, LinkSplitConfig{}, s);
    write_json(out / ("link_split_seed" + std::to_string(s) + ".json"), link_split_to_json(split, d.graph));
    reports.push_back(run_link_prediction(emb, d.graph, split, hc, s));
    write_json(out / ("link_" + to_string(hc.kind) + "_seed" + std::to_string(s) + ".json"), reports.back());
  }
  MetricReport mean = mean_report(reports);
  write_json(out / ("link_" + to_string(hc.kind) + "_mean.json"), mean);
  return mean;
}

MetricReport eval_class(const EmbeddingTable& emb, const Dataset& d,
                        const std::vector<std::pair<std::string, std::vector<std::string>>>& labels,
                        const HeaderConfig& hc, const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  std::vector<MetricReport> reports;
  for (std::uint64_t s : seeds) {
    const LabelSplit split = make_label_split(d.graph, labels, LabelSplitConfig{}, s);
    write_json(out / ("class_split_seed" + std::to_string(s) + ".json"), label_split_to_json(split, d.graph));
    reports.push_back(run_node_classification(emb, d.graph, split, hc, s));
    write_json(out / ("class_" + to_string(hc.kind) + "_seed" + std::to_string(s) + ".json"), reports.back());
  }
  MetricReport mean = mean_report(reports);
  write_json(out / ("class_" + to_string(hc.kind) + "_mean.json"), mean);
  return mean;
}

// ---------------------------------------------------------------- subcommands

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool deterministic = false;
  bool quiet = false;
};

void finalize(PretrainConfig& cfg, const Common& c) {
  if (c.seed_given) cfg.seed = c.seed;
  if (c.deterministic) cfg.workers = 1;
  cfg.check();
}

int cmd_synth(const std::string& out, const std::string& config, const std::vector<std::string>& sets,
              std::uint64_t seed, bool seed_given) {
  json j = config.empty() ? json::object() : read_json(config);
  apply_overrides(j, sets);
  SynthConfig sc;
  try {
    sc = j.get<SynthConfig>();
    if (seed_given) sc.seed = seed;
    sc.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  const SynthGraph s = generate_synthetic_tahg(sc);
  write_synthetic(s, sc, out);
  write_json(fs::path(out) / "dataset.json", json{{"rich_text_types", s.rich_types}});
  std::cout << "synth: " << s.graph.num_nodes() << " nodes, " << s.graph.num_edges() << " edges -> " << out << "\n";
  return kOk;
}

int cmd_ingest(const std::string& dir, const std::string& out_arg, const std::string& nodes, const std::string& edges,
               const std::vector<std::string>& rich, int min_freq) {
  const fs::path in = dir;
  const fs::path out = out_arg.empty() ? in : fs::path(out_arg);
  const fs::path nodes_path = nodes.empty() ? in / "nodes.jsonl" : fs::path(nodes);
  const fs::path edges_path = edges.empty() ? in / "edges.jsonl" : fs::path(edges);
  const std::vector<std::string> rich_types = rich.empty() ? read_rich_types(in) : rich;
  if (min_freq < 1) throw ConfigError("--min-freq must be >= 1");
  TahGraph g = load_graph(nodes_path, edges_path, rich_types);
  fs::create_directories(out);
  if (fs::weakly_canonical(out) != fs::weakly_canonical(nodes_path.parent_path()) || !nodes.empty()) {
    save_graph(g, out / "nodes.jsonl", out / "edges.jsonl");
    if (fs::exists(in / "labels.jsonl") && !fs::exists(out / "labels.jsonl")) {
      fs::copy_file(in / "labels.jsonl", out / "labels.jsonl");
    }
  }
  const ValidationReport report = validate(g);
  write_json(out / "validation.json", report);
  write_json(out / "dataset.json", json{{"rich_text_types", rich_types}});
  const Vocab v = build_vocab(g, min_freq);
  v.save(out / "vocab.txt");
  std::cout << "ingest: " << g.num_nodes() << " nodes, " << g.num_edges() << " edges, vocabulary " << v.size()
            << ", " << report.violations.size() << " violation(s)\n";
  return kOk;
}

int cmd_pretrain(const std::string& data, const std::string& out, const Common& c) {
  PretrainConfig cfg = load_pretrain_config(c.config, c.sets);
  finalize(cfg, c);
  const Dataset d = load_dataset(data);
  const Vocab v = dataset_vocab(d, cfg.min_freq);
  const auto outcome = run_pretrain(d, v, cfg, out);
  std::cout << "pretrain: " << outcome.trace.steps.size() << " steps, checksum " << hex64(outcome.trace.final_checksum)
            << " -> " << out << "\n";
  return outcome.trace.interrupted ? kRuntimeError : kOk;
}

int cmd_embed(const std::string& data, const std::string& ckpt, const std::string& out, std::uint64_t seed,
              bool seed_given) {
  const Dataset d = load_dataset(data);
  json header;
  const ModelState m = load_checkpoint(ckpt, &header);
  PretrainConfig cfg = header.contains("pretrain") ? header.at("pretrain").get<PretrainConfig>() : PretrainConfig{};
  const Vocab v = dataset_vocab(d, cfg.min_freq);
  const std::string provenance = fs::path(ckpt).filename().string() + ":" + hex64(m.checksum());
  const EmbeddingTable t = embed_with(m, d, v, cfg, seed_given ? seed : cfg.seed, provenance);
  save_embeddings(out, t);
  std::cout << "embed: " << t.values.rows() << " x " << t.values.cols() << " checksum " << hex64(t.checksum()) << " -> "
            << out << "\n";
  return kOk;
}

int cmd_eval(bool link, const std::string& data, const std::string& emb_path, const std::string& out,
             const std::string& header, const std::string& header_config, const std::string& seeds,
             const std::string& relation, const std::string& labels) {
  const Dataset d = load_dataset(data);
  const HeaderConfig hc = load_header_config(header_config, header);
  const auto seed_list = parse_seeds(seeds);
  const EmbeddingTable emb = load_embeddings(emb_path);
  fs::create_directories(out);
  const MetricReport mean = link ? eval_link(emb, d, pick_relation(d.graph, relation), hc, seed_list, out)
                                 : eval_class(emb, d, dataset_labels(d, labels), hc, seed_list, out);
  std::cout << (link ? "eval-link" : "eval-class") << ": " << json(mean).at("metrics").dump() << "\n";
  return mean.failed ? kRuntimeError : kOk;
}

int cmd_ablate(const std::string& data, const std::string& out, const std::string& sweep,
               const std::string& values, const std::string& header, const std::string& seeds,
               const std::string& relation, const Common& c) {
  const auto vals = split_csv(values);
  if (vals.empty()) throw ConfigError("--values is empty");
  PretrainConfig base = load_pretrain_config(c.config, c.sets);
  finalize(base, c);
  const HeaderConfig hc = load_header_config("", header);
  const auto seed_list = parse_seeds(seeds);

  // Resolve every sweep value into a config before doing any work.
  std::vector<PretrainConfig> configs;
  for (const auto& val : vals) {
    PretrainConfig cfg = base;
    auto as_int = [&](int lo, int hi) {
      int x = 0;
      try {
        std::size_t pos = 0;
        x = std::stoi(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
      } catch (const std::exception&) {
        throw ConfigError("sweep " + sweep + ": bad value \"" + val + "\"");
      }
      if (x < lo || x > hi) throw ConfigError("sweep " + sweep + ": value " + val + " out of range");
      return x;
    };
    if (sweep == "K") {
      cfg.sampler.order = as_int(1, 4);
    } else if (sweep == "k") {
      cfg.k_neighbors = as_int(0, 64);
    } else if (sweep == "neg-ratio") {
      cfg.sampler.negative_ratio = as_int(1, 1000);
    } else if (sweep == "tasks") {
      if (val == "full") {
        cfg.use_cgp = cfg.use_mlm = true;
      } else if (val == "no_cgp") {
        cfg.use_cgp = false;
        cfg.use_mlm = true;
      } else if (val == "no_mlm") {
        cfg.use_cgp = true;
        cfg.use_mlm = false;
      } else if (val == "random_feats") {
        cfg.random_feats = true;
      } else {
        throw ConfigError("sweep tasks: values are full, no_cgp, no_mlm, random_feats");
      }
    } else if (sweep == "aug") {
      try {
        cfg.aug_mode = parse_augment_mode(val);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    } else {
      throw ConfigError("unknown sweep \"" + sweep + "\" (K, k, neg-ratio, tasks, aug)");
    }
    cfg.check();
    configs.push_back(cfg);
  }

  const Dataset d = load_dataset(data);
  const Vocab v = dataset_vocab(d, base.min_freq);
  const auto labels = fs::exists(d.dir / "labels.jsonl") ? dataset_labels(d, "")
                                                          : std::vector<std::pair<std::string, std::vector<std::string>>>{};
  const RelId rel = pick_relation(d.graph, relation);
  json summary = json::array();
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const fs::path run_dir = fs::path(out) / (sweep + "=" + vals[i]);
    const auto outcome = run_pretrain(d, v, configs[i], run_dir / "pretrain");
    if (outcome.trace.interrupted) return kRuntimeError;
    const EmbeddingTable emb =
        embed_with(outcome.model, d, v, configs[i], configs[i].seed, "ablate:" + sweep + "=" + vals[i]);
    save_embeddings(run_dir / "embeddings.bin", emb);
    json row = {{"sweep", sweep}, {"value", vals[i]}};
    if (!labels.empty()) {
      const MetricReport r = eval_class(emb, d, labels, hc, seed_list, run_dir);
      row["classification"] = json(r).at("metrics");
    }
    const MetricReport r = eval_link(emb, d, rel, hc, seed_list, run_dir);
    row["link"] = json(r).at("metrics");
    summary.push_back(row);
    std::cout << "ablate " << sweep << "=" << vals[i] << ": " << row.dump() << "\n";
  }
  write_json(fs::path(out) / "summary.json", summary);
  return kOk;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--set", c.sets, "Config override key=value (repeatable)");
  app->add_option("--seed", c.seed, "Seed")->each([&c](const std::string&) { c.seed_given = true; });
  app->add_flag("--deterministic", c.deterministic, "Serialize example generation");
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  g_stop.store(false);
  CLI::App app{"Text-attributed heterogeneous graph language-model pretraining"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  // synth
  std::string synth_out, synth_config;
  std::vector<std::string> synth_sets;
  std::uint64_t synth_seed = 0;
  bool synth_seed_given = false;
  auto* synth = app.add_subcommand("synth", "Generate a planted-partition graph");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--config", synth_config, "Synth config JSON");
  synth->add_option("--set", synth_sets, "Override key=value");
  synth->add_option("--seed", synth_seed, "Seed")->each([&](const std::string&) { synth_seed_given = true; });

  // ingest
  std::string ingest_dir, ingest_out, ingest_nodes, ingest_edges;
  std::vector<std::string> ingest_rich;
  int ingest_min_freq = 1;
  auto* ingest = app.add_subcommand("ingest", "Load, validate and build the vocabulary");
  ingest->add_option("dir", ingest_dir, "Dataset directory")->required();
  ingest->add_option("--out", ingest_out, "Output directory (default: dir)");
  ingest->add_option("--nodes", ingest_nodes, "Nodes JSONL (default: dir/nodes.jsonl)");
  ingest->add_option("--edges", ingest_edges, "Edges JSONL (default: dir/edges.jsonl)");
  ingest->add_option("--rich-types", ingest_rich, "Rich-text node types (default: dir/dataset.json)");
  ingest->add_option("--min-freq", ingest_min_freq, "Vocabulary minimum frequency");

  // pretrain
  Common pt;
  std::string pt_data, pt_out;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Joint context-graph and masked-LM pretraining");
  pretrain_cmd->add_option("--data", pt_data, "Dataset directory")->required();
  pretrain_cmd->add_option("--out", pt_out, "Output directory")->required();
  add_common(pretrain_cmd, pt);

  // embed
  std::string em_data, em_ckpt, em_out;
  std::uint64_t em_seed = 0;
  bool em_seed_given = false;
  auto* embed = app.add_subcommand("embed", "Export frozen node embeddings");
  embed->add_option("--data", em_data, "Dataset directory")->required();
  embed->add_option("--ckpt", em_ckpt, "Checkpoint")->required();
  embed->add_option("--out", em_out, "Embedding file")->required();
  embed->add_option("--seed", em_seed, "Augmentation seed (default: pretraining seed)")
      ->each([&](const std::string&) { em_seed_given = true; });

  // eval-link / eval-class
  struct EvalArgs {
    std::string data, emb, out, header = "mlp", header_config, seeds = "0", relation, labels;
    bool deterministic = false;
  } el, ec;
  auto add_eval = [&](const char* name, const char* desc, EvalArgs& a) {
    auto* cmd = app.add_subcommand(name, desc);
    cmd->add_option("--data", a.data, "Dataset directory")->required();
    cmd->add_option("--emb", a.emb, "Embedding file")->required();
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--header", a.header, "mlp or rgcn");
    cmd->add_option("--header-config", a.header_config, "Header config JSON");
    cmd->add_option("--seeds", a.seeds, "Comma-separated seeds");
    cmd->add_flag("--deterministic", a.deterministic, "Accepted for symmetry; evaluation is always serial");
    return cmd;
  };
  auto* eval_link_cmd = add_eval("eval-link", "Link prediction on frozen embeddings", el);
  eval_link_cmd->add_option("--relation", el.relation, "Target relation (default: first)");
  auto* eval_class_cmd = add_eval("eval-class", "Node classification on frozen embeddings", ec);
  eval_class_cmd->add_option("--labels", ec.labels, "Label JSONL (default: data/labels.jsonl)");

  // ablate
  Common ab;
  std::string ab_data, ab_out, ab_sweep, ab_values, ab_header = "mlp", ab_seeds = "0", ab_relation;
  auto* ablate = app.add_subcommand("ablate", "Pretrain and evaluate across one swept setting");
  ablate->add_option("--data", ab_data, "Dataset directory")->required();
  ablate->add_option("--out", ab_out, "Output directory")->required();
  ablate->add_option("--sweep", ab_sweep, "K, k, neg-ratio, tasks or aug")->required();
  ablate->add_option("--values", ab_values, "Comma-separated values")->required();
  ablate->add_option("--header", ab_header, "mlp or rgcn");
  ablate->add_option("--seeds", ab_seeds, "Downstream seeds");
  ablate->add_option("--relation", ab_relation, "Link-prediction relation");
  add_common(ablate, ab);

  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  const LogLevel previous = log_level();
  if (quiet) set_log_level(LogLevel::kWarning);
  auto prev_handler = std::signal(SIGINT, on_interrupt);
  int code = kOk;
  try {
    if (*synth) {
      code = cmd_synth(synth_out, synth_config, synth_sets, synth_seed, synth_seed_given);
    } else if (*ingest) {
      code = cmd_ingest(ingest_dir, ingest_out, ingest_nodes, ingest_edges, ingest_rich, ingest_min_freq);
    } else if (*pretrain_cmd) {
      code = cmd_pretrain(pt_data, pt_out, pt);
    } else if (*embed) {
      code = cmd_embed(em_data, em_ckpt, em_out, em_seed, em_seed_given);
    } else if (*eval_link_cmd) {
      code = cmd_eval(true, el.data, el.emb, el.out, el.header, el.header_config, el.seeds, el.relation, "");
    } else if (*eval_class_cmd) {
      code = cmd_eval(false, ec.data, ec.emb, ec.out, ec.header, ec.header_config, ec.seeds, "", ec.labels);
    } else if (*ablate) {
      code = cmd_ablate(ab_data, ab_out, ab_sweep, ab_values, ab_header, ab_seeds, ab_relation, ab);
    }
  } catch (const ConfigError& e) {
    std::cerr << "thlm: config error: " << e.what() << "\n";
    code = kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "thlm: error: " << e.what() << "\n";
    code = kRuntimeError;
  }
  std::signal(SIGINT, prev_handler);
  set_log_level(previous);
  return code;
}

}  // namespace thlm::cli
