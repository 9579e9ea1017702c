#include "tasnn/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "tasnn/checkpoint.hpp"
#include "tasnn/common.hpp"
#include "tasnn/encoder.hpp"

namespace tasnn::pipeline {

namespace fs = std::filesystem;

namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot finalize " + path.string());
}

nlohmann::ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("cannot parse " + path.string() + ": " + ex.what());
  }
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

std::string cell_name(std::size_t ways, std::size_t shots) {
  return std::to_string(ways) + "way_" + std::to_string(shots) + "shot";
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

model::ModelConfig plain_snn(model::ModelConfig cfg) {
  cfg.task_aware = false;
  cfg.beta = 0.0;
  cfg.center_loss_weight = 0.0;
  return cfg;
}

corpus::CorpusManifest run_synth(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto corpus = corpus::build_corpus(cfg.corpus, cfg.seeds.corpus);
  return corpus::write_corpus(corpus, out_dir);
}

data::Dataset run_extract(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir) {
  cfg.validate();
  const auto manifest = corpus::CorpusManifest::load(corpus_dir / "manifest.json");
  const features::SeededConvEncoder encoder(cfg.features.encoder_seed, cfg.features.encoder_dim);
  auto ds = data::extract_manifest(manifest, corpus_dir, cfg.features, encoder);
  data::write_dataset(ds, out_dir);
  return ds;
}

data::Dataset run_augment(const RunConfig& cfg, const fs::path& features_json, const fs::path& out_dir) {
  cfg.validate();
  const auto ds = data::load_dataset(features_json);
  const auto split = data::split_by_group(ds, cfg.split.test_fraction, cfg.split.val_fraction, cfg.split_seed());
  auto params = cfg.augmentation.params;
  params.rescale = 1.0;
  std::optional<features::ZcaWhitener> zca;
  if (params.zca_whitening) {
    std::vector<features::MalwareImage> train_images;
    for (auto i : split.train) train_images.push_back(ds.samples[i].image);
    zca = features::ZcaWhitener::fit(train_images, params.zca_epsilon);
  }
  data::Dataset out = ds;
  for (auto i : split.train) {
    const auto& src = ds.samples[i];
    if (src.augmented) continue;
    for (std::size_t c = 0; c < cfg.augmentation.copies; ++c) {
      auto s = src;
      s.id = src.id + "_aug" + std::to_string(c);
      s.augmented = true;
      const auto seed = mix_seed(mix_seed(cfg.seeds.corpus, 0xa06), i * 1000 + c);
      s.image = features::augment(src.image, params, seed, zca ? &*zca : nullptr);
      out.samples.push_back(std::move(s));
    }
  }
  out.digest = data::dataset_digest(out);
  data::write_dataset(out, out_dir);
  return out;
}

train::Trainer run_train(const RunConfig& cfg, const fs::path& features_json, const fs::path& checkpoint,
                         const TrainOptions& options) {
  cfg.validate();
  const auto ds = data::load_dataset(features_json);
  if (ds.options.encoder_dim != cfg.model.task_input_dim)
    throw ConfigError("features were extracted with encoder_dim " + std::to_string(ds.options.encoder_dim) +
                      " but the model expects " + std::to_string(cfg.model.task_input_dim));
  const auto split = data::split_by_group(ds, cfg.split.test_fraction, cfg.split.val_fraction, cfg.split_seed());
  const auto train_set = ds.subset(split.train);
  const auto val_set = ds.subset(split.val);

  auto model_cfg = cfg.model_config();
  if (options.baseline) model_cfg = plain_snn(model_cfg);
  train::Trainer trainer = options.resume ? ckpt::load(*options.resume) : train::Trainer(model_cfg, cfg.training_config());
  if (options.resume) trainer.config().epochs = cfg.training.epochs;

  trainer.fit(train_set, &val_set, [&](const train::EpochRecord& r) {
    if (options.log == nullptr) return;
    *options.log << "epoch " << r.epoch << " train " << fmt(r.train_loss);
    if (r.val_loss) *options.log << " val " << fmt(*r.val_loss);
    *options.log << '\n';
  });

  nlohmann::ordered_json meta;
  meta["config_digest"] = cfg.digest();
  meta["feature_digest"] = ds.digest;
  meta["baseline"] = !trainer.model().config().task_aware;
  ckpt::save(checkpoint, trainer, meta);

  nlohmann::ordered_json curve;
  curve["epochs"] = nlohmann::ordered_json::array();
  for (const auto& r : trainer.history()) {
    nlohmann::ordered_json e;
    e["epoch"] = r.epoch;
    e["train_loss"] = r.train_loss;
    e["val_loss"] = r.val_loss ? nlohmann::ordered_json(*r.val_loss) : nlohmann::ordered_json(nullptr);
    e["embedding_loss"] = r.embedding_loss;
    e["binary_loss"] = r.binary_loss;
    e["center_loss"] = r.center_loss;
    curve["epochs"].push_back(std::move(e));
  }
  const auto dir = checkpoint.has_parent_path() ? checkpoint.parent_path() : fs::path(".");
  write_text_atomic(dir / "loss_curve.json", curve.dump(2) + "\n");
  return trainer;
}

void check_grid(const data::Dataset& ds, const EvalGrid& grid) {
  const auto by_class = ds.by_class();
  for (auto w : grid.ways) {
    for (auto s : grid.shots) {
      std::size_t ok = 0;
      for (const auto& members : by_class) ok += members.size() >= s + 1 ? 1 : 0;
      if (ok < w)
        throw ConfigError("eval cell " + std::to_string(w) + "-way " + std::to_string(s) + "-shot is infeasible: " +
                          std::to_string(ok) + " test classes have " + std::to_string(s + 1) + "+ samples");
    }
  }
}

nlohmann::ordered_json run_eval(const RunConfig& cfg, const fs::path& features_json, const fs::path& checkpoint,
                                const fs::path& out_dir, const EvalOptions& options) {
  cfg.validate();
  const auto ds = data::load_dataset(features_json);
  nlohmann::ordered_json meta;
  const auto trainer = ckpt::load(checkpoint, &meta);
  const auto recorded = meta.value("feature_digest", std::string());
  if (recorded != ds.digest && !options.allow_digest_mismatch)
    throw DataError("checkpoint was trained on features " + recorded + " but " + features_json.string() + " has " +
                    ds.digest + " (pass --allow-digest-mismatch to override)");
  const auto split = data::split_by_group(ds, cfg.split.test_fraction, cfg.split.val_fraction, cfg.split_seed());
  const auto test_set = ds.subset(split.test);
  check_grid(test_set, cfg.eval);

  nlohmann::ordered_json report;
  report["format"] = "tasnn-eval/1";
  report["config_digest"] = cfg.digest();
  report["checkpoint_digest"] = file_digest(checkpoint);
  report["feature_digest"] = ds.digest;
  report["config"] = cfg.to_json();
  report["cells"] = nlohmann::ordered_json::array();
  eval::ModelEmbedder embedder(trainer.model(), test_set);
  for (auto w : cfg.eval.ways) {
    for (auto s : cfg.eval.shots) {
      const auto r = eval::run_eval(test_set, embedder, w, s, cfg.eval.episodes, mix_seed(cfg.seeds.eval, w * 1000 + s));
      report["cells"].push_back(r.to_json());
    }
  }
  write_text_atomic(out_dir / "report.json", report.dump(2) + "\n");
  run_plot(out_dir / "report.json", std::nullopt, out_dir, false);
  return report;
}

std::vector<fs::path> run_plot(const fs::path& report_json, const std::optional<fs::path>& loss_curve,
                               const fs::path& out_dir, bool gnuplot_script) {
  const auto report = read_json(report_json);
  std::vector<fs::path> written;
  std::vector<std::string> cells;
  try {
    std::ostringstream summary;
    summary << "n_way,k_shot,accuracy,auc,tp,fp,tn,fn\n";
    for (const auto& cell : report.at("cells")) {
      const auto w = cell.at("n_way").get<std::size_t>();
      const auto s = cell.at("k_shot").get<std::size_t>();
      const auto& c = cell.at("confusion");
      summary << w << ',' << s << ',' << fmt(cell.at("accuracy").get<double>()) << ','
              << fmt(cell.at("auc").get<double>()) << ',' << c.at("tp") << ',' << c.at("fp") << ',' << c.at("tn")
              << ',' << c.at("fn") << '\n';
      const auto name = cell_name(w, s);
      cells.push_back(name);
      std::ostringstream roc;
      roc << "fpr,tpr\n";
      for (const auto& p : cell.at("roc")) roc << fmt(p[0].get<double>()) << ',' << fmt(p[1].get<double>()) << '\n';
      write_text_atomic(out_dir / ("roc_" + name + ".csv"), roc.str());
      written.push_back(out_dir / ("roc_" + name + ".csv"));
      std::ostringstream pca;
      pca << "pc1,pc2,label,probability\n";
      for (const auto& p : cell.at("pairs")) {
        if (!p.contains("pca")) continue;
        pca << fmt(p["pca"][0].get<double>()) << ',' << fmt(p["pca"][1].get<double>()) << ','
            << p.at("label").get<int>() << ',' << fmt(p.at("probability").get<double>()) << '\n';
      }
      write_text_atomic(out_dir / ("pca_" + name + ".csv"), pca.str());
      written.push_back(out_dir / ("pca_" + name + ".csv"));
    }
    write_text_atomic(out_dir / "summary.csv", summary.str());
    written.push_back(out_dir / "summary.csv");
    if (loss_curve) {
      const auto curve = read_json(*loss_curve);
      std::ostringstream loss;
      loss << "epoch,train_loss,val_loss\n";
      for (const auto& e : curve.at("epochs")) {
        loss << e.at("epoch").get<std::size_t>() << ',' << fmt(e.at("train_loss").get<double>()) << ',';
        if (!e.at("val_loss").is_null()) loss << fmt(e.at("val_loss").get<double>());
        loss << '\n';
      }
      write_text_atomic(out_dir / "loss.csv", loss.str());
      written.push_back(out_dir / "loss.csv");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed report: ") + ex.what());
  }
  if (gnuplot_script) {
    std::ostringstream gp;
    gp << "set datafile separator ','\nset terminal pngcairo size 800,600\n";
    gp << "set output 'roc.png'\nset xlabel 'FPR'\nset ylabel 'TPR'\nset key bottom right\n";
    gp << "plot ";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      gp << (i ? ", " : "") << "'roc_" << cells[i] << ".csv' using 1:2 skip 1 with lines title '" << cells[i] << "'";
    }
    gp << ", x with dots notitle\n";
    if (!cells.empty()) {
      gp << "set output 'pca.png'\nset xlabel 'PC1'\nset ylabel 'PC2'\n";
      gp << "plot 'pca_" << cells[0] << ".csv' using 1:($3==1?$2:1/0) skip 1 with points title 'positive', "
         << "'' using 1:($3==0?$2:1/0) skip 1 with points title 'negative'\n";
    }
    if (loss_curve) {
      gp << "set output 'loss.png'\nset xlabel 'epoch'\nset ylabel 'loss'\n";
      gp << "plot 'loss.csv' using 1:2 skip 1 with lines title 'train', '' using 1:3 skip 1 with lines title 'validation'\n";
    }
    write_text_atomic(out_dir / "plot.gp", gp.str());
    written.push_back(out_dir / "plot.gp");
  }
  return written;
}

}  // namespace tasnn::pipeline
