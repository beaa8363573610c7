#include "wavecap/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "wavecap/adapters.hpp"
#include "wavecap/bias.hpp"
#include "wavecap/config.hpp"
#include "wavecap/errors.hpp"
#include "wavecap/hashing.hpp"
#include "wavecap/image_io.hpp"
#include "wavecap/metrics.hpp"
#include "wavecap/runner.hpp"
#include "wavecap/sampling.hpp"

namespace wavecap::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config_file;
  std::vector<std::string> assignments;
  std::string run_dir;
  std::optional<uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* sub, Common& c, bool training) {
  sub->add_option("--config", c.config_file, "JSON file overriding config defaults")->check(CLI::ExistingFile);
  sub->add_option("--set", c.assignments, "Override one field, e.g. --set biart.layers=2")->take_all();
  sub->add_option("--run-dir", c.run_dir, "Checkpoint directory (default: output_dir from the config)");
  sub->add_flag("--force", c.force, "Load checkpoints even when their config hash differs");
  auto* seed = sub->add_option("--seed", c.seed, "Run seed");
  if (training) seed->required();
}

config::RunConfig resolve(const Common& c) {
  auto cfg = c.config_file.empty() ? config::RunConfig::desk() : config::load_file(c.config_file);
  json patch = json::object();
  for (const auto& a : config::environment_assignments()) config::apply_assignment(patch, a);
  for (const auto& a : c.assignments) config::apply_assignment(patch, a);
  if (!patch.empty()) cfg = config::from_json(patch, cfg);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path run_dir(const Common& c, const config::RunConfig& cfg) {
  return c.run_dir.empty() ? fs::path(cfg.output_dir) : fs::path(c.run_dir);
}

text::BPEVocab load_vocab(const fs::path& run) {
  const auto p = runner::vocab_path(run);
  if (!fs::exists(p)) throw DataError("missing vocabulary " + p.string() + " (run train-biart first)");
  return text::BPEVocab::load(p);
}

// The vocabulary file must be the one the transformer was trained with.
void check_vocab(const fs::path& run) {
  const auto desc = runner::biart_dir(run) / checkpoint::kDescriptorName;
  std::ifstream in(desc);
  if (!in) return;
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("extra") || !j["extra"].contains("vocab_sha256")) return;
  if (j["extra"]["vocab_sha256"] != hashing::sha256_file(runner::vocab_path(run))) {
    throw CheckpointError("vocabulary " + runner::vocab_path(run).string() + " differs from the one used in training");
  }
}

runner::Logger logger(std::ostream& err) {
  return [&err](const std::string& msg) { err << msg << '\n'; };
}

void emit(const json& report, const std::string& path, std::ostream& out) {
  const auto text = report.dump(2) + "\n";
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw DataError("cannot write " + path);
}

json provenance(const config::RunConfig& cfg, const fs::path& input) {
  return {{"config_hash", config::hash(cfg)},
          {"input", {{"file", input.filename().string()}, {"git_blob_sha1", hashing::git_blob_sha1_file(input)}}}};
}

std::vector<biart::TokenId> image_tokens(wavevae::Stage2Model& vae, const fs::path& image, int64_t size) {
  return runner::encode_tokens(vae, image_io::load_image(image, size).unsqueeze(0)).front();
}

struct Captioner {
  wavevae::Stage2Model vae{nullptr};
  biart::BiART model{nullptr};
  text::BPEVocab vocab;
  std::unique_ptr<sampling::LikelihoodScorer> scorer;

  sampling::TextDecoder decoder() const {
    return [this](const std::vector<biart::TokenId>& t) { return text::decode_text(vocab, t); };
  }
};

Captioner load_captioner(const config::RunConfig& cfg, const fs::path& run, bool force, bool with_adapters) {
  Captioner c;
  c.vae = runner::load_vae(runner::vae_dir(run), cfg, force);
  c.model = runner::load_biart(runner::biart_dir(run), cfg, force);
  check_vocab(run);
  c.vocab = load_vocab(run);
  if (with_adapters) runner::load_adapters(c.model, runner::adapters_dir(run), force);
  c.scorer = std::make_unique<sampling::LikelihoodScorer>(c.model);
  return c;
}

int classify(const std::exception& e) {
  if (dynamic_cast<const ConfigHashMismatch*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const CheckpointError*>(&e) || dynamic_cast<const DataError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const IndexError*>(&e) ||
      dynamic_cast<const TruncationError*>(&e)) {
    return kData;
  }
  return kRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Wavelet image tokenizer and bidirectional caption transformer"};
  app.name("wavecap");
  app.require_subcommand(1);

  Common common;
  std::string manifest_path, image, output, records_path, report_path, split = "test";
  std::string male_terms, female_terms;
  int stage = 0;
  runner::SynthOptions synth;

  auto* synth_cmd = app.add_subcommand("synth-data", "Write a procedurally drawn dataset and its manifest");
  synth_cmd->add_option("--output", output, "Dataset directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of images");
  synth_cmd->add_option("--image-size", synth.image_size, "Image side in pixels");
  synth_cmd->add_option("--test-fraction", synth.test_fraction, "Fraction of images in the test split");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->required();

  auto* vae_cmd = app.add_subcommand("train-vae", "Train the image tokenizer");
  vae_cmd->add_option("--stage", stage, "1: multi-level pretraining, 2: integrate, calibrate and finetune")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  vae_cmd->add_option("--manifest", manifest_path, "Training manifest")->required()->check(CLI::ExistingFile);
  add_common(vae_cmd, common, true);

  auto* biart_cmd = app.add_subcommand("train-biart", "Train the vocabulary and the bidirectional transformer");
  biart_cmd->add_option("--manifest", manifest_path, "Training manifest")->required()->check(CLI::ExistingFile);
  add_common(biart_cmd, common, true);

  auto* ft_cmd = app.add_subcommand("finetune-keywords", "Train keyword adapters on a frozen transformer");
  ft_cmd->add_option("--manifest", manifest_path, "Training manifest")->required()->check(CLI::ExistingFile);
  add_common(ft_cmd, common, true);

  auto* cap_cmd = app.add_subcommand("caption", "Print the top caption for an image");
  cap_cmd->add_option("image", image, "Image file")->required()->check(CLI::ExistingFile);
  add_common(cap_cmd, common, false);

  auto* kw_cmd = app.add_subcommand("keywords", "Print voted keywords for an image");
  kw_cmd->add_option("image", image, "Image file")->required()->check(CLI::ExistingFile);
  add_common(kw_cmd, common, false);

  auto* rec_cmd = app.add_subcommand("reconstruct", "Tokenize and decode an image");
  rec_cmd->add_option("image", image, "Image file")->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--output", output, "Output image")->required();
  add_common(rec_cmd, common, false);

  auto* batch_cmd = app.add_subcommand("caption-batch", "Caption every image of a manifest split into records");
  batch_cmd->add_option("--manifest", manifest_path, "Manifest")->required()->check(CLI::ExistingFile);
  batch_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  batch_cmd->add_option("--output", output, "Caption records (JSONL)")->required();
  add_common(batch_cmd, common, false);

  auto* acc_cmd = app.add_subcommand("eval-accuracy", "BLEU-4, ROUGE-L and CIDEr-D over caption records");
  acc_cmd->add_option("records", records_path, "Caption records (JSONL)")->required()->check(CLI::ExistingFile);
  acc_cmd->add_option("--report", report_path, "Write the report here instead of stdout");
  add_common(acc_cmd, common, false);

  auto* bias_cmd = app.add_subcommand("eval-bias", "Gender error, term ratio, sentiment and leakage over caption records");
  bias_cmd->add_option("records", records_path, "Caption records (JSONL)")->required()->check(CLI::ExistingFile);
  bias_cmd->add_option("--report", report_path, "Write the report here instead of stdout");
  bias_cmd->add_option("--male-terms", male_terms, "Male term list, one per line")->check(CLI::ExistingFile);
  bias_cmd->add_option("--female-terms", female_terms, "Female term list, one per line")->check(CLI::ExistingFile);
  add_common(bias_cmd, common, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      out << runner::write_synthetic_dataset(output, synth).string() << '\n';
      return kOk;
    }

    auto cfg = resolve(common);
    const auto run = run_dir(common, cfg);
    const auto log = logger(err);

    if (vae_cmd->parsed()) {
      const auto records = manifest::select_split(manifest::load_manifest(manifest_path), manifest::Split::Train);
      const auto images = runner::load_images(records, cfg.wavevae.image_size);
      if (stage == 1) {
        auto model = runner::train_vae_stage1(cfg, images, log);
        runner::save_stage1(model, cfg.seed, cfg.training.stage1_steps, runner::stage1_dir(run));
        out << runner::stage1_dir(run).string() << '\n';
      } else {
        auto s1 = runner::load_stage1(runner::stage1_dir(run), cfg, common.force);
        auto model = runner::train_vae_stage2(cfg, s1, images, log);
        runner::save_vae(model, cfg.seed, cfg.training.stage2_steps, runner::vae_dir(run));
        out << runner::vae_dir(run).string() << '\n';
      }
      return kOk;
    }

    if (biart_cmd->parsed()) {
      const auto records = manifest::select_split(manifest::load_manifest(manifest_path), manifest::Split::Train);
      auto vae = runner::load_vae(runner::vae_dir(run), cfg, common.force);
      const auto tokens = runner::encode_tokens(vae, runner::load_images(records, cfg.wavevae.image_size));
      const auto vocab = runner::train_vocab(cfg, records);
      fs::create_directories(run);
      vocab.save(runner::vocab_path(run));
      runner::BiARTRun info;
      auto model = runner::train_biart(cfg, runner::caption_pairs(cfg, vocab, records, tokens), log, &info);
      runner::save_biart(model, cfg.seed, info.steps, hashing::sha256_file(runner::vocab_path(run)),
                         runner::biart_dir(run));
      out << runner::biart_dir(run).string() << '\n';
      return kOk;
    }

    if (ft_cmd->parsed()) {
      const auto records = manifest::select_split(manifest::load_manifest(manifest_path), manifest::Split::Train);
      auto vae = runner::load_vae(runner::vae_dir(run), cfg, common.force);
      auto model = runner::load_biart(runner::biart_dir(run), cfg, common.force);
      check_vocab(run);
      const auto vocab = load_vocab(run);
      const auto tokens = runner::encode_tokens(vae, runner::load_images(records, cfg.wavevae.image_size));
      int64_t steps = 0;
      runner::finetune_keywords(cfg, model, runner::keyword_pairs(cfg, vocab, records, tokens), log, &steps);
      runner::save_adapters(model, cfg.seed, steps, runner::adapters_dir(run));
      out << runner::adapters_dir(run).string() << '\n';
      return kOk;
    }

    if (cap_cmd->parsed() || kw_cmd->parsed()) {
      const bool keywords = kw_cmd->parsed();
      auto c = load_captioner(cfg, run, common.force, keywords);
      cfg.sampler.text_vocab_limit = c.vocab.size();
      const auto tokens = image_tokens(c.vae, image, cfg.wavevae.image_size);
      if (keywords) {
        const auto kws = sampling::extract_keywords(c.model, tokens, cfg.sampler, c.scorer.get(), c.decoder());
        out << adapters::serialize_keywords(kws) << '\n';
      } else {
        out << sampling::caption(c.model, tokens, cfg.sampler, c.scorer.get(), c.decoder()).text << '\n';
      }
      return kOk;
    }

    if (rec_cmd->parsed()) {
      auto vae = runner::load_vae(runner::vae_dir(run), cfg, common.force);
      torch::NoGradGuard guard;
      const auto x = image_io::load_image(image, cfg.wavevae.image_size).unsqueeze(0);
      const auto y = wavevae::decode(vae, wavevae::encode(vae, x));
      image_io::save_image(output, y[0]);
      out << output << '\n';
      return kOk;
    }

    if (batch_cmd->parsed()) {
      const auto records = manifest::select_split(manifest::load_manifest(manifest_path), manifest::parse_split(split));
      auto c = load_captioner(cfg, run, common.force, false);
      cfg.sampler.text_vocab_limit = c.vocab.size();
      std::ostringstream lines;
      for (const auto& r : records) {
        const auto tokens = image_tokens(c.vae, r.image_path, cfg.wavevae.image_size);
        const auto cand = sampling::caption(c.model, tokens, cfg.sampler, c.scorer.get(), c.decoder());
        json j;
        j["image_id"] = r.image_path.filename().string();
        j["candidate"] = cand.text;
        j["references"] = r.caption.empty() ? json::array() : json::array({r.caption});
        j["gender"] = r.gender ? json(*r.gender) : json(nullptr);
        j["ethnicity"] = r.ethnicity ? json(*r.ethnicity) : json(nullptr);
        lines << j.dump() << '\n';
        err << r.image_path.filename().string() << ": " << cand.text << '\n';
      }
      std::ofstream f(output, std::ios::trunc);
      f << lines.str();
      if (!f) throw DataError("cannot write " + output);
      out << output << '\n';
      return kOk;
    }

    if (acc_cmd->parsed()) {
      auto report = provenance(cfg, records_path);
      report["accuracy"] = eval::to_json(eval::accuracy_report(eval::load_caption_records(records_path)));
      emit(report, report_path, out);
      return kOk;
    }

    if (bias_cmd->parsed()) {
      if (male_terms.empty() != female_terms.empty()) throw ConfigError("--male-terms and --female-terms go together");
      const auto lexicon =
          male_terms.empty() ? eval::GenderLexicon::standard() : eval::GenderLexicon::load(male_terms, female_terms);
      auto report = provenance(cfg, records_path);
      report["bias"] = eval::to_json(
          eval::bias_report(eval::load_caption_records(records_path), lexicon, eval::LexiconSentiment{}, cfg.lic));
      emit(report, report_path, out);
      return kOk;
    }
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << '\n' << e.snapshot() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return classify(e);
  }
  return kUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace wavecap::cli
