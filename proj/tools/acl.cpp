// acl: command-line front end for data generation, stream experiments,
// compression benchmarks and report rendering.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "acl/binary_io.hpp"
#include "acl/compression.hpp"
#include "acl/dataset.hpp"
#include "acl/decoder.hpp"
#include "acl/engine.hpp"
#include "acl/errors.hpp"
#include "acl/experiment.hpp"
#include "acl/report.hpp"
#include "acl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw acl::ConfigError("--config", "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw acl::ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  acl::write_file_bytes(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw acl::ConfigError(flag, "no such file '" + path + "'");
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenArgs& a) {
  json j = read_json_file(a.config);
  if (a.seed) j["seed"] = *a.seed;
  const auto spec = acl::synthetic_spec_from_json(j);
  auto ds = acl::generate(spec);
  const auto hash = acl::canonical_hash(acl::to_json(spec));
  ds.metadata = "config_hash=" + hash + ";seed=" + std::to_string(spec.seed);
  acl::save_dataset(ds, a.out);
  std::cout << "wrote " << ds.samples.size() << " samples to " << a.out << " (config " << hash << ")\n";
  return 0;
}

// ---- run -------------------------------------------------------------------

struct RunArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunArgs& a) {
  json j = read_json_file(a.config);
  if (a.seed) j["seed"] = *a.seed;
  const auto config = acl::ExperimentConfig::from_json(j);
  if (config.dataset_path) require_file(*config.dataset_path, "dataset");
  const auto dataset = acl::load_or_generate(config);
  const auto result = acl::run_experiment(config, dataset);
  acl::write_experiment_outputs(config, result, a.out);

  const int last = result.metrics.num_stages() - 1;
  std::cout << "config " << config.hash() << ", " << last << " stages\n";
  for (const auto& row : result.metrics.rows)
    if (row.stage == last) std::cout << "  " << row.suite << ": " << fixed(100.0 * row.accuracy, 2) << "%\n";
  if (result.mtil)
    std::cout << "  transfer " << fixed(result.mtil->transfer, 2) << ", avg " << fixed(result.mtil->avg, 2)
              << ", last " << fixed(result.mtil->last, 2) << '\n';
  return 0;
}

// ---- compress --------------------------------------------------------------

struct CompressArgs {
  std::string dataset, out;
  std::vector<std::string> modes;
  std::int64_t components = 5;
  std::int64_t dataset_components = 200;
  std::size_t chunk_size = 5000;
  std::string decoder = "linear";
  int repeats = 100;
  int batch = 32;
  std::uint64_t seed = 0;
};

struct ModeResult {
  std::string mode;
  double bytes_per_sample = 0;
  double recon_error = 0;   // vs the matrix the codec was given
  double raw_deviation = 0;  // vs the original tokens
  double ms_per_batch = 0;
};

// Stored form of every sample under one mode, plus what it takes to read it back.
struct EncodedSet {
  std::vector<std::vector<std::uint8_t>> records;  // per-instance modes
  std::optional<acl::DatasetPcaCodec> codec;      // dataset-wide mode
  std::vector<Eigen::MatrixXf> coefficients;
  std::vector<double> storage;

  acl::TokenMatrix load(std::size_t i) const {
    if (codec) return acl::TokenMatrix(codec->decode(static_cast<std::int64_t>(i), coefficients[i]));
    acl::ByteReader r(records[i]);
    if (r.get_u8() == 0) {
      const auto t = r.get_u32(), d = r.get_u32();
      Eigen::MatrixXf m(t, d);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.get_f32();
      return acl::TokenMatrix(std::move(m));
    }
    return acl::TokenMatrix(acl::reconstruct(acl::read_compressed_feature(r)));
  }
};

EncodedSet encode_all(const acl::Dataset& ds, acl::CompressionMode mode, const CompressArgs& a,
                      const acl::AnytimeEngine& engine, acl::Dataset& compressed_out) {
  EncodedSet set;
  const auto n = ds.samples.size();
  if (mode == acl::CompressionMode::DatasetPca) {
    std::vector<std::int64_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<acl::TokenMatrix> tokens;
    for (const auto& s : ds.samples) tokens.push_back(acl::materialize(s.payload));
    set.codec = acl::DatasetPcaCodec::fit(ids, tokens, a.chunk_size, a.dataset_components);
    for (std::size_t i = 0; i < n; ++i) {
      set.coefficients.push_back(set.codec->encode(ids[i], tokens[i]));
      set.storage.push_back(set.codec->storage_bytes_per_sample(ids[i], tokens[i].num_tokens()));
    }
    return set;
  }
  for (const auto& s : ds.samples) {
    const auto tokens = acl::materialize(s.payload);
    auto payload = engine.compress(tokens);
    acl::ByteWriter w;
    if (const auto* raw = std::get_if<acl::TokenMatrix>(&payload)) {
      w.put_u8(0);
      w.put_u32(static_cast<std::uint32_t>(raw->num_tokens()));
      w.put_u32(static_cast<std::uint32_t>(raw->dim()));
      const auto& m = raw->matrix();
      for (Eigen::Index k = 0; k < m.size(); ++k) w.put_f32(m.data()[k]);
      set.storage.push_back(static_cast<double>(acl::storage_bytes(*raw)));
    } else {
      const auto& cf = std::get<acl::CompressedFeature>(payload);
      w.put_u8(1);
      acl::write_compressed_feature(w, cf);
      set.storage.push_back(static_cast<double>(acl::storage_bytes(cf)));
    }
    set.records.push_back(w.take());
    compressed_out.samples.push_back({s.label, s.split, std::move(payload)});
  }
  return set;
}

int cmd_compress(const CompressArgs& a) {
  require_file(a.dataset, "--dataset");
  if (a.repeats < 1) throw acl::ConfigError("--repeats", "must be >= 1");
  if (a.batch < 1) throw acl::ConfigError("--batch", "must be >= 1");
  const auto ds = acl::load_dataset(a.dataset);
  if (ds.samples.empty()) throw acl::ConfigError("--dataset", "dataset has no samples");

  std::vector<std::string> modes = a.modes;
  if (modes.empty()) modes = {"none", "pca", "pca_cls", "pca_cls_quant", "dataset_pca"};

  const auto input_bytes = acl::read_file_bytes(a.dataset);
  const json canonical{{"dataset_hash", acl::hex64(acl::fnv1a64(input_bytes))},
                       {"modes", modes},
                       {"components", a.components},
                       {"dataset_components", a.dataset_components},
                       {"chunk_size", a.chunk_size},
                       {"decoder", a.decoder},
                       {"batch", a.batch},
                       {"seed", a.seed}};
  const auto hash = acl::canonical_hash(canonical);
  const std::string meta = "config_hash=" + hash + ";seed=" + std::to_string(a.seed);

  json engine_json{{"decoder", a.decoder}, {"seed", a.seed}};
  fs::create_directories(a.out);
  std::vector<ModeResult> results;
  for (const auto& mode_name : modes) {
    const auto mode = acl::parse_compression_mode(mode_name);
    engine_json["compression"] = {{"mode", mode_name},
                                  {"components", a.components},
                                  {"dataset_components", a.dataset_components},
                                  {"chunk_size", a.chunk_size}};
    const auto config = acl::ExperimentConfig::from_json(engine_json);
    const acl::AnytimeEngine engine(ds.table, ds.dim(), config.engine);

    acl::Dataset compressed{ds.table, ds.task_of, {}, meta + ";mode=" + mode_name};
    const auto set = encode_all(ds, mode, a, engine, compressed);

    ModeResult r{mode_name};
    r.bytes_per_sample = std::accumulate(set.storage.begin(), set.storage.end(), 0.0) / set.storage.size();
    const bool weighted = mode == acl::CompressionMode::PcaCls || mode == acl::CompressionMode::PcaClsQuant;
    const auto& frozen = engine.frozen_params();
    const bool block = frozen.variant == acl::DecoderVariant::TransformerBlock;
    const Eigen::VectorXd gain = block ? frozen.block.ln1_gain : Eigen::VectorXd::Ones(ds.dim());
    const Eigen::VectorXd bias = block ? frozen.block.ln1_bias : Eigen::VectorXd::Zero(ds.dim());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const auto x = acl::materialize(ds.samples[i].payload);
      const Eigen::MatrixXf y = set.load(i).matrix();
      const Eigen::MatrixXf ref =
          weighted ? acl::cls_weighting(x.matrix(), gain, bias, config.engine.compression.rescale_patch_weights)
                   : x.matrix();
      r.recon_error += (ref - y).norm() / ref.norm();
      r.raw_deviation += (x.matrix() - y).norm() / x.matrix().norm();
    }
    r.recon_error /= static_cast<double>(ds.samples.size());
    r.raw_deviation /= static_cast<double>(ds.samples.size());

    // Mean wall time of load + reconstruct + decoder forward/backward for one batch.
    acl::Rng rng(acl::Rng::derive(a.seed, acl::rng_stream::kSampler));
    const auto& params = engine.frozen_params();
    const auto labels = ds.table.labels();
    double total_ms = 0;
    for (int rep = 0; rep < a.repeats; ++rep) {
      std::vector<std::size_t> pick(static_cast<std::size_t>(a.batch));
      for (auto& p : pick) p = rng.uniform_index(ds.samples.size());
      const auto start = std::chrono::steady_clock::now();
      acl::TrainingBatch batch{{}, labels};
      for (std::size_t i : pick) batch.samples.push_back({set.load(i).as_double(), ds.samples[i].label});
      const auto g = acl::loss_gradients(batch, params, ds.table, config.engine.beta);
      const auto stop = std::chrono::steady_clock::now();
      if (!std::isfinite(g.loss)) throw std::runtime_error("non-finite loss while timing mode " + mode_name);
      total_ms += std::chrono::duration<double, std::milli>(stop - start).count();
    }
    r.ms_per_batch = total_ms / a.repeats;
    if (mode != acl::CompressionMode::DatasetPca)
      acl::save_dataset(compressed, (fs::path(a.out) / ("dataset_" + mode_name + ".acld")).string());
    results.push_back(r);
  }

  std::string table = "config_hash,seed,mode,bytes_per_sample,kb_per_sample,recon_error,raw_deviation\n";
  std::string timing = "config_hash,seed,mode,repeats,batch,ms_per_batch\n";
  for (const auto& r : results) {
    table += hash + ',' + std::to_string(a.seed) + ',' + r.mode + ',' + fixed(r.bytes_per_sample, 2) + ',' +
             fixed(r.bytes_per_sample / 1000.0, 3) + ',' + fixed(r.recon_error, 6) + ',' +
             fixed(r.raw_deviation, 6) + '\n';
    timing += hash + ',' + std::to_string(a.seed) + ',' + r.mode + ',' + std::to_string(a.repeats) + ',' +
              std::to_string(a.batch) + ',' + fixed(r.ms_per_batch, 4) + '\n';
  }
  write_text(fs::path(a.out) / "compress.csv", table);
  write_text(fs::path(a.out) / "timing.csv", timing);

  std::cout << "mode            KB/sample  ms/batch  recon_error  raw_deviation\n";
  for (const auto& r : results) {
    char line[128];
    std::snprintf(line, sizeof line, "%-14s %10.3f %9.3f %12.6f %14.6f\n", r.mode.c_str(),
                  r.bytes_per_sample / 1000.0, r.ms_per_batch, r.recon_error, r.raw_deviation);
    std::cout << line;
  }
  return 0;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  std::string metrics_dir, out;
};

int cmd_report(const ReportArgs& a) {
  const auto runs = acl::load_metrics_dir(a.metrics_dir);
  const auto written = acl::write_report(runs, a.out);
  for (const auto& p : written) std::cout << "wrote " << p << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anytime continual learning: data generation, stream experiments, compression, reports"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset from a JSON spec");
  gen_cmd->add_option("--config", gen.config, "Synthetic spec (JSON)")->required();
  gen_cmd->add_option("--out", gen.out, "Output dataset file")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the spec's seed");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a stream experiment");
  run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out", run.out, "Output directory")->required();
  run_cmd->add_option("--seed", run.seed, "Override the config's seed");

  CompressArgs comp;
  auto* comp_cmd = app.add_subcommand("compress", "Storage, reconstruction and timing per compression mode");
  comp_cmd->add_option("--dataset", comp.dataset, "Dataset file")->required();
  comp_cmd->add_option("--mode", comp.modes, "none | pca | pca_cls | pca_cls_quant | dataset_pca (repeatable)");
  comp_cmd->add_option("--components", comp.components, "Per-instance PCA components")->capture_default_str();
  comp_cmd->add_option("--dataset-components", comp.dataset_components, "Dataset-wide PCA components")
      ->capture_default_str();
  comp_cmd->add_option("--chunk-size", comp.chunk_size, "Dataset-wide PCA chunk size")->capture_default_str();
  comp_cmd->add_option("--decoder", comp.decoder, "linear | transformer_block")->capture_default_str();
  comp_cmd->add_option("--repeats", comp.repeats, "Timing repetitions")->capture_default_str();
  comp_cmd->add_option("--batch", comp.batch, "Batch size for timing")->capture_default_str();
  comp_cmd->add_option("--seed", comp.seed, "Seed for decoder init and batch picks")->capture_default_str();
  comp_cmd->add_option("--out", comp.out, "Output directory")->required();

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Render charts and tables from metrics CSV files");
  rep_cmd->add_option("--metrics-dir", rep.metrics_dir, "Directory scanned for metrics*.csv")->required();
  rep_cmd->add_option("--out", rep.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*run_cmd) return cmd_run(run);
    if (*comp_cmd) return cmd_compress(comp);
    if (*rep_cmd) return cmd_report(rep);
  } catch (const acl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const acl::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const acl::ArgumentError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
