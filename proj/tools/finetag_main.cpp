// finetag: one binary for the whole workflow —
//   convert        restructure a CUB-style annotation directory
//   fit-projection fit the ICA/PCA channel-reduction basis
//   train          train the bilinear attribute head
//   eval           score a checkpoint and write metric reports
//   param-count    print head vs. FC-stack parameter counts
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "finetag/attributes.hpp"
#include "finetag/errors.hpp"
#include "finetag/feature_store.hpp"
#include "finetag/label_matrix.hpp"
#include "finetag/manifest.hpp"
#include "finetag/metrics.hpp"
#include "finetag/model.hpp"
#include "finetag/projection.hpp"
#include "finetag/split.hpp"
#include "finetag/trainer.hpp"
#include "finetag/version.hpp"

namespace {

using namespace finetag;
namespace fs = std::filesystem;

std::uint32_t default_threads() {
  if (const char* env = std::getenv("FINETAG_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1 && v <= 1024) return std::uint32_t(v);
    std::cerr << "warning: ignoring invalid FINETAG_THREADS='" << env << "'\n";
  }
  return 1;
}

struct GlobalOptions {
  bool json_errors = false;
  std::uint32_t threads = default_threads();
};

std::ifstream open_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return in;
}

std::ifstream open_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return in;
}

std::ofstream create_binary(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  return out;
}

DatasetSplit load_split(const fs::path& path) {
  auto in = open_text(path);
  nlohmann::json j;
  try {
    in >> j;
    return DatasetSplit::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadFormat, path.string() + ": " + e.what());
  }
}

LabelMatrix load_labels(const fs::path& path) {
  auto in = open_binary(path);
  return LabelMatrix::read(in);
}

// CUB archives ship `attributes.txt` either at the dataset root or under
// `attributes/`; accept both.
fs::path find_cub_file(const fs::path& dir, const std::string& name) {
  for (const fs::path& candidate : {dir / name, dir / "attributes" / name}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw Error(ErrorCode::MissingFile,
              "no " + name + " under " + dir.string());
}

// ---------------------------------------------------------------------------
// convert

struct ConvertOptions {
  std::string cub_dir;
  std::string out_dir;
  std::uint32_t val_size = 700;
  std::uint64_t seed = 0;
  bool strict = false;
};

void cmd_convert(const ConvertOptions& opt) {
  const fs::path cub(opt.cub_dir);
  const fs::path out(opt.out_dir);
  fs::create_directories(out);

  const fs::path attr_path = find_cub_file(cub, "attributes.txt");
  const fs::path anno_path = find_cub_file(cub, "image_attribute_labels.txt");
  const fs::path images_path = find_cub_file(cub, "images.txt");
  const fs::path split_path = find_cub_file(cub, "train_test_split.txt");

  std::vector<std::string> warnings;
  auto attr_in = open_text(attr_path);
  AttributeVocabulary vocab = AttributeVocabulary::parse(attr_in, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  auto images_in = open_text(images_path);
  const std::uint32_t num_images = parse_image_count(images_in);

  auto anno_in = open_text(anno_path);
  LabelMatrix labels = LabelMatrix::parse_annotations(anno_in, vocab, num_images, opt.strict);

  auto split_in = open_text(split_path);
  DatasetSplit split = DatasetSplit::make(split_in, opt.val_size, opt.seed);
  for (std::uint32_t id : split.all_ids())
    if (id > num_images)
      throw Error(ErrorCode::ImageIdOutOfRange,
                  "split refers to image " + std::to_string(id) + " but images.txt lists " +
                      std::to_string(num_images));

  const auto empty_rows = labels.empty_row_ids();
  if (!empty_rows.empty())
    std::cerr << "warning: " << empty_rows.size()
              << " image(s) have no positive attribute and will be skipped by "
                 "losses/metrics\n";

  const fs::path labels_out = out / "labels.ftlm";
  const fs::path split_out = out / "split.json";
  const fs::path vocab_out = out / "vocabulary.json";
  {
    auto sink = create_binary(labels_out);
    labels.write(sink);
  }
  {
    std::ofstream sink(split_out, std::ios::trunc);
    if (!sink) throw Error(ErrorCode::IoFailure, "cannot create " + split_out.string());
    sink << split.to_json().dump(2) << "\n";
  }
  {
    std::ofstream sink(vocab_out, std::ios::trunc);
    if (!sink) throw Error(ErrorCode::IoFailure, "cannot create " + vocab_out.string());
    sink << vocab.to_json().dump(2) << "\n";
  }

  RunManifest manifest;
  manifest.subcommand = "convert";
  manifest.config["cub_dir"] = cub.string();
  manifest.config["out"] = out.string();
  manifest.config["val_size"] = opt.val_size;
  manifest.config["seed"] = opt.seed;
  manifest.config["strict"] = opt.strict;
  manifest.add_input(attr_path);
  manifest.add_input(anno_path);
  manifest.add_input(images_path);
  manifest.add_input(split_path);
  manifest.add_output(labels_out);
  manifest.add_output(split_out);
  manifest.add_output(vocab_out);
  manifest.write(out / "manifest.json");

  std::cout << "labels: " << labels.rows() << " x " << labels.cols() << "\n"
            << "groups: " << vocab.num_groups() << "\n"
            << "split: train " << split.train_ids.size() << ", val "
            << split.val_ids.size() << ", test " << split.test_ids.size() << "\n"
            << "wrote " << labels_out.string() << ", " << split_out.string() << ", "
            << vocab_out.string() << "\n";
}

// ---------------------------------------------------------------------------
// fit-projection

struct FitProjectionOptions {
  std::string features;
  std::string split;
  std::string out;
  std::string method = "ica";
  std::uint32_t components = 20;
  std::uint32_t per_image = 50;
  std::uint32_t max_iter = 200;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

void cmd_fit_projection(const FitProjectionOptions& opt) {
  FeatureStore store(opt.features);
  DatasetSplit split = load_split(opt.split);
  if (opt.components > store.channels())
    throw Error(ErrorCode::RankDeficient,
                "cannot fit " + std::to_string(opt.components) + " components from " +
                    std::to_string(store.channels()) + " channels");

  SampleBank bank = sample_locations(store, std::span<const std::uint32_t>(split.train_ids),
                                     opt.per_image, opt.seed);
  if (bank.below_recommended)
    std::cerr << "warning: only " << bank.samples.rows()
              << " samples for " << store.channels()
              << " channels; consider raising --per-image\n";

  ProjectionBasis basis;
  if (opt.method == "pca") {
    basis = fit_pca(bank, opt.components);
  } else {
    FastIcaOptions ica;
    ica.max_iter = opt.max_iter;
    ica.tol = opt.tol;
    ica.seed = opt.seed;
    basis = fit_fastica(bank, opt.components, ica);
  }

  {
    auto sink = create_binary(opt.out);
    write_basis(basis, sink);
  }

  RunManifest manifest;
  manifest.subcommand = "fit-projection";
  manifest.config["features"] = opt.features;
  manifest.config["split"] = opt.split;
  manifest.config["method"] = opt.method;
  manifest.config["components"] = opt.components;
  manifest.config["per_image"] = opt.per_image;
  manifest.config["max_iter"] = opt.max_iter;
  manifest.config["tol"] = opt.tol;
  manifest.config["seed"] = opt.seed;
  manifest.add_input(opt.features);
  manifest.add_input(opt.split);
  manifest.add_output(opt.out);
  manifest.write(fs::path(opt.out).string() + ".manifest.json");

  std::cout << "method: " << opt.method << "\n"
            << "samples: " << bank.samples.rows() << " x " << bank.samples.cols() << "\n"
            << "components: " << basis.components() << "\n";
  if (opt.method == "ica") {
    std::cout << "iterations: " << basis.iterations << "\n"
              << "converged: " << (basis.converged ? "yes" : "no") << "\n";
    if (!basis.converged)
      std::cerr << "warning: fixed-point iteration did not converge within "
                << opt.max_iter << " iterations; basis written anyway\n";
  }
  std::cout << "wrote " << opt.out << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string features;
  std::string labels;
  std::string split;
  std::string projection;
  std::string out_dir;
  std::string loss = "smooth";
  std::string optimizer = "adam";
  std::string dtype = "f32";
  std::optional<double> lr;
  std::uint32_t batch_size = 16;
  std::uint32_t epochs = 5;
  std::uint64_t seed = 0;
  bool no_shuffle = false;
  bool bcnn_normalize = false;
};

LossKind parse_loss(const std::string& name) {
  if (name == "smooth") return LossKind::smooth;
  if (name == "hinge") return LossKind::hinge;
  if (name == "hinge-sum") return LossKind::hinge_sum;
  throw Error(ErrorCode::ConfigMismatch, "unknown loss '" + name + "'");
}

template <typename S>
void run_train(const TrainOptions& opt, const GlobalOptions& global) {
  FeatureStore store(opt.features);
  LabelMatrix labels = load_labels(opt.labels);
  DatasetSplit split = load_split(opt.split);
  auto basis_in = open_binary(opt.projection);
  ProjectionBasis basis = read_basis(basis_in);

  ModelConfig config;
  config.channels = store.channels();
  config.components = basis.components();
  config.num_classes = labels.cols();
  config.dtype = std::is_same_v<S, double> ? Dtype::f64 : Dtype::f32;
  config.bcnn_normalize = opt.bcnn_normalize;
  if (basis.channels() != config.channels)
    throw Error(ErrorCode::ConfigMismatch,
                "projection expects " + std::to_string(basis.channels()) +
                    " channels, feature store has " + std::to_string(config.channels));
  for (std::uint32_t id : split.train_ids)
    if (!labels.contains(id))
      throw Error(ErrorCode::UnknownImageId,
                  "train image " + std::to_string(id) + " missing from label matrix");

  TrainConfig train_config;
  train_config.batch_size = opt.batch_size;
  train_config.learning_rate = opt.lr;
  train_config.epochs = opt.epochs;
  train_config.loss = parse_loss(opt.loss);
  train_config.optimizer =
      opt.optimizer == "momentum" ? OptimizerKind::sgd_momentum : OptimizerKind::adam;
  train_config.seed = opt.seed;
  train_config.shuffle = !opt.no_shuffle;
  train_config.threads = global.threads;
  train_config.validate();

  ModelParams<S> params = init_params<S>(config, basis, opt.seed);

  const fs::path out(opt.out_dir);
  fs::create_directories(out);
  const fs::path checkpoint = out / "checkpoint.ftmd";
  const fs::path history_path = out / "history.jsonl";
  std::ofstream history(history_path, std::ios::trunc);
  if (!history) throw Error(ErrorCode::IoFailure, "cannot create " + history_path.string());

  TrainSinks sinks;
  sinks.checkpoint_path = checkpoint;
  sinks.history = &history;
  sinks.on_epoch = [&](const EpochRecord& rec) {
    std::cout << "epoch " << rec.epoch << "/" << opt.epochs << "  loss "
              << rec.mean_loss;
    if (rec.val_avgprec) std::cout << "  val_avgprec " << *rec.val_avgprec;
    if (rec.skipped) std::cout << "  skipped " << rec.skipped;
    std::cout << "\n" << std::flush;
  };

  train(config, params, store, labels, split, train_config, sinks);

  RunManifest manifest;
  manifest.subcommand = "train";
  manifest.config["features"] = opt.features;
  manifest.config["labels"] = opt.labels;
  manifest.config["split"] = opt.split;
  manifest.config["projection"] = opt.projection;
  manifest.config["loss"] = opt.loss;
  manifest.config["optimizer"] = opt.optimizer;
  manifest.config["lr"] = train_config.resolved_lr();
  manifest.config["batch_size"] = opt.batch_size;
  manifest.config["epochs"] = opt.epochs;
  manifest.config["seed"] = opt.seed;
  manifest.config["shuffle"] = !opt.no_shuffle;
  manifest.config["dtype"] = opt.dtype;
  manifest.config["bcnn_normalize"] = opt.bcnn_normalize;
  manifest.add_input(opt.features);
  manifest.add_input(opt.labels);
  manifest.add_input(opt.split);
  manifest.add_input(opt.projection);
  manifest.add_output(checkpoint);
  manifest.add_output(history_path);
  manifest.write(out / "manifest.json");

  std::cout << "wrote " << checkpoint.string() << "\n";
}

void cmd_train(const TrainOptions& opt, const GlobalOptions& global) {
  if (opt.dtype == "f64") run_train<double>(opt, global);
  else run_train<float>(opt, global);
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string checkpoint;
  std::string features;
  std::string labels;
  std::string split;
  std::string subset = "test";
  std::string out_dir;
  std::string vocab;  // defaults to vocabulary.json next to --labels
  std::string tie_rule = "index";
};

TieRule parse_tie_rule(const std::string& name) {
  if (name == "index") return TieRule::by_index;
  if (name == "optimistic") return TieRule::optimistic;
  if (name == "pessimistic") return TieRule::pessimistic;
  throw Error(ErrorCode::ConfigMismatch, "unknown tie rule '" + name + "'");
}

void cmd_eval(const EvalOptions& opt, const GlobalOptions& global) {
  auto checkpoint_in = open_binary(opt.checkpoint);
  auto [config, params] = read_checkpoint<double>(checkpoint_in);
  FeatureStore store(opt.features);
  LabelMatrix labels = load_labels(opt.labels);
  DatasetSplit split = load_split(opt.split);

  if (store.channels() != config.channels)
    throw Error(ErrorCode::ConfigMismatch,
                "checkpoint expects " + std::to_string(config.channels) +
                    " channels, feature store has " + std::to_string(store.channels()));
  if (labels.cols() != config.num_classes)
    throw Error(ErrorCode::ConfigMismatch,
                "checkpoint expects " + std::to_string(config.num_classes) +
                    " labels, matrix has " + std::to_string(labels.cols()));

  const std::vector<std::uint32_t>* ids = nullptr;
  if (opt.subset == "train") ids = &split.train_ids;
  else if (opt.subset == "val") ids = &split.val_ids;
  else if (opt.subset == "test") ids = &split.test_ids;
  else throw Error(ErrorCode::ConfigMismatch, "unknown subset '" + opt.subset + "'");
  if (ids->empty())
    throw Error(ErrorCode::AllImagesSkipped, "subset '" + opt.subset + "' is empty");

  std::optional<AttributeVocabulary> vocab;
  fs::path vocab_path = opt.vocab.empty()
                            ? fs::path(opt.labels).parent_path() / "vocabulary.json"
                            : fs::path(opt.vocab);
  if (fs::exists(vocab_path)) {
    auto in = open_text(vocab_path);
    nlohmann::json j;
    in >> j;
    vocab = AttributeVocabulary::from_json(j);
    if (vocab->num_attributes() != labels.cols())
      throw Error(ErrorCode::ConfigMismatch,
                  "vocabulary lists " + std::to_string(vocab->num_attributes()) +
                      " attributes, matrix has " + std::to_string(labels.cols()));
  } else if (!opt.vocab.empty()) {
    throw Error(ErrorCode::MissingFile, "cannot open " + vocab_path.string());
  } else {
    std::cerr << "warning: no vocabulary at " << vocab_path.string()
              << "; per-group report and attribute names omitted\n";
  }

  Matrix<double> scores = score_images(config, params, store,
                                       std::span<const std::uint32_t>(*ids),
                                       global.threads);
  std::vector<std::uint32_t> rows(ids->size());
  for (std::size_t i = 0; i < ids->size(); ++i) rows[i] = labels.row_of((*ids)[i]);

  MetricsReport report =
      compute_metrics(scores, labels, std::span<const std::uint32_t>(rows),
                      vocab ? &*vocab : nullptr, parse_tie_rule(opt.tie_rule));

  const fs::path out(opt.out_dir);
  fs::create_directories(out);
  const fs::path summary_path = out / "summary.json";
  const fs::path per_label_path = out / "per_label.csv";
  const fs::path per_group_path = out / "per_group.csv";
  const fs::path ap_freq_path = out / "ap_vs_frequency.csv";

  {
    std::ofstream sink(summary_path, std::ios::trunc);
    sink << metrics_summary_json(report).dump(2) << "\n";
    if (!sink) throw Error(ErrorCode::IoFailure, "cannot write " + summary_path.string());
  }
  if (vocab) {
    std::ofstream sink(per_label_path, std::ios::trunc);
    write_per_label_csv(report, *vocab, sink);
    if (!sink) throw Error(ErrorCode::IoFailure, "cannot write " + per_label_path.string());
  }
  if (vocab) {
    std::ofstream sink(per_group_path, std::ios::trunc);
    write_per_group_csv(report, sink);
    if (!sink) throw Error(ErrorCode::IoFailure, "cannot write " + per_group_path.string());
  }
  {
    std::ofstream sink(ap_freq_path, std::ios::trunc);
    write_ap_vs_frequency_csv(report, sink);
    if (!sink) throw Error(ErrorCode::IoFailure, "cannot write " + ap_freq_path.string());
  }

  RunManifest manifest;
  manifest.subcommand = "eval";
  manifest.config["checkpoint"] = opt.checkpoint;
  manifest.config["features"] = opt.features;
  manifest.config["labels"] = opt.labels;
  manifest.config["split"] = opt.split;
  manifest.config["subset"] = opt.subset;
  manifest.config["tie_rule"] = opt.tie_rule;
  manifest.add_input(opt.checkpoint);
  manifest.add_input(opt.features);
  manifest.add_input(opt.labels);
  manifest.add_input(opt.split);
  if (vocab) manifest.add_input(vocab_path);
  manifest.add_output(summary_path);
  if (vocab) {
    manifest.add_output(per_label_path);
    manifest.add_output(per_group_path);
  }
  manifest.add_output(ap_freq_path);
  manifest.write(out / "manifest.json");

  std::cout << "images: " << report.images_counted
            << " (skipped " << report.skipped_images << ")\n"
            << "avgprec: " << report.avgprec_mean << "\n"
            << "wmap: " << report.wmap.overall << "\n"
            << "undefined labels: " << report.wmap.undefined_labels << "\n"
            << "wrote reports under " << out.string() << "\n";
}

// ---------------------------------------------------------------------------
// param-count

struct ParamCountOptions {
  std::uint32_t channels = 512;
  std::uint32_t components = 20;
  std::uint32_t num_classes = 312;
};

void cmd_param_count(const ParamCountOptions& opt) {
  ModelConfig config;
  config.channels = opt.channels;
  config.components = opt.components;
  config.num_classes = opt.num_classes;
  ParamCountReport report = ratio_report(config);

  std::ostringstream ratio;
  ratio.setf(std::ios::fixed);
  ratio.precision(2);
  ratio << report.ratio;

  std::cout << "channels (C):       " << opt.channels << "\n"
            << "components (K):     " << opt.components << "\n"
            << "labels (N):         " << opt.num_classes << "\n"
            << "head parameters:    " << report.head << "\n"
            << "baseline fc stack:  " << report.baseline_fc << "\n"
            << "reduction factor:   " << ratio.str() << "x\n";
  if (report.within_reference_band)
    std::cout << "note: consistent with 40x reduction\n";
}

// ---------------------------------------------------------------------------

int fail(const GlobalOptions& global, const Error& e) {
  const int exit_code = is_usage_error(e.code()) ? 2 : 1;
  if (global.json_errors) {
    nlohmann::ordered_json j;
    j["error"] = std::string(error_code_name(e.code()));
    j["message"] = e.what();
    j["exit_code"] = exit_code;
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "error: " << e.what() << "\n";
  }
  return exit_code;
}

int fail(const GlobalOptions& global, const std::exception& e) {
  if (global.json_errors) {
    nlohmann::ordered_json j;
    j["error"] = "Unexpected";
    j["message"] = e.what();
    j["exit_code"] = 1;
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  GlobalOptions global;
  CLI::App app{"Fine-grained multi-attribute bilinear classification head"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.add_flag("--json-errors", global.json_errors,
               "emit machine-readable errors on stderr");
  app.add_option("--threads", global.threads,
                 "worker threads (default: FINETAG_THREADS or 1); 1 guarantees "
                 "bit-reproducible outputs")
      ->check(CLI::Range(1u, 1024u));

  ConvertOptions convert_opt;
  auto* convert = app.add_subcommand(
      "convert", "restructure CUB-style annotations into binary labels + split");
  convert->add_option("--cub-dir", convert_opt.cub_dir, "dataset directory")
      ->required();
  convert->add_option("--out", convert_opt.out_dir, "output directory")->required();
  convert->add_option("--val-size", convert_opt.val_size,
                      "images sampled from the test partition for validation");
  convert->add_option("--seed", convert_opt.seed, "sampling seed");
  convert->add_flag("--strict", convert_opt.strict,
                    "require exactly 5 fields per annotation line");

  FitProjectionOptions fit_opt;
  auto* fit = app.add_subcommand("fit-projection",
                                 "fit the channel-reduction basis on train features");
  fit->add_option("--features", fit_opt.features, "feature store (.ftns)")->required();
  fit->add_option("--split", fit_opt.split, "split JSON from convert")->required();
  fit->add_option("--out", fit_opt.out, "output basis file (.ftpj)")->required();
  fit->add_option("--method", fit_opt.method, "ica or pca")
      ->check(CLI::IsMember({"ica", "pca"}));
  fit->add_option("--components", fit_opt.components, "projected channel count")
      ->check(CLI::Range(1u, 100000u));
  fit->add_option("--per-image", fit_opt.per_image, "spatial samples per train image")
      ->check(CLI::Range(1u, 100000u));
  fit->add_option("--max-iter", fit_opt.max_iter, "fixed-point iteration cap");
  fit->add_option("--tol", fit_opt.tol, "convergence tolerance");
  fit->add_option("--seed", fit_opt.seed, "sampling/init seed");

  TrainOptions train_opt;
  auto* train_cmd = app.add_subcommand("train", "train the attribute head");
  train_cmd->add_option("--features", train_opt.features, "feature store (.ftns)")
      ->required();
  train_cmd->add_option("--labels", train_opt.labels, "label matrix (.ftlm)")->required();
  train_cmd->add_option("--split", train_opt.split, "split JSON")->required();
  train_cmd->add_option("--projection", train_opt.projection, "basis file (.ftpj)")
      ->required();
  train_cmd->add_option("--out-dir", train_opt.out_dir, "checkpoint/history directory")
      ->required();
  train_cmd->add_option("--loss", train_opt.loss, "smooth, hinge, or hinge-sum")
      ->check(CLI::IsMember({"smooth", "hinge", "hinge-sum"}));
  train_cmd->add_option("--optimizer", train_opt.optimizer, "adam or momentum")
      ->check(CLI::IsMember({"adam", "momentum"}));
  train_cmd
      ->add_option("--lr", train_opt.lr,
                   "learning rate (default 1e-5 adam, 1e-4 momentum)")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch-size", train_opt.batch_size, "mini-batch size")
      ->check(CLI::Range(1u, 100000u));
  train_cmd->add_option("--epochs", train_opt.epochs, "training epochs")
      ->check(CLI::Range(1u, 1000000u));
  train_cmd->add_option("--seed", train_opt.seed, "init/shuffle seed");
  train_cmd->add_option("--dtype", train_opt.dtype, "f32 or f64 parameters")
      ->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_flag("--no-shuffle", train_opt.no_shuffle,
                      "keep the epoch order fixed");
  train_cmd->add_flag("--bcnn-normalize", train_opt.bcnn_normalize,
                      "signed-sqrt + L2 normalization after pooling");

  EvalOptions eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint and write reports");
  eval_cmd->add_option("--checkpoint", eval_opt.checkpoint, "model file (.ftmd)")
      ->required();
  eval_cmd->add_option("--features", eval_opt.features, "feature store (.ftns)")
      ->required();
  eval_cmd->add_option("--labels", eval_opt.labels, "label matrix (.ftlm)")->required();
  eval_cmd->add_option("--split", eval_opt.split, "split JSON")->required();
  eval_cmd->add_option("--out", eval_opt.out_dir, "report directory")->required();
  eval_cmd->add_option("--subset", eval_opt.subset, "train, val, or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--vocab", eval_opt.vocab,
                       "vocabulary JSON (default: next to --labels)");
  eval_cmd->add_option("--tie-rule", eval_opt.tie_rule,
                       "index, optimistic, or pessimistic")
      ->check(CLI::IsMember({"index", "optimistic", "pessimistic"}));

  ParamCountOptions count_opt;
  auto* count = app.add_subcommand("param-count", "head vs. FC-stack parameter counts");
  count->add_option("--channels", count_opt.channels, "backbone channels C")
      ->check(CLI::PositiveNumber);
  count->add_option("--components", count_opt.components, "projected channels K")
      ->check(CLI::PositiveNumber);
  count->add_option("--num-classes", count_opt.num_classes, "attribute count N")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;
  }

  try {
    if (app.got_subcommand(convert)) cmd_convert(convert_opt);
    else if (app.got_subcommand(fit)) cmd_fit_projection(fit_opt);
    else if (app.got_subcommand(train_cmd)) cmd_train(train_opt, global);
    else if (app.got_subcommand(eval_cmd)) cmd_eval(eval_opt, global);
    else if (app.got_subcommand(count)) cmd_param_count(count_opt);
  } catch (const Error& e) {
    return fail(global, e);
  } catch (const std::exception& e) {
    return fail(global, e);
  }
  return 0;
}
