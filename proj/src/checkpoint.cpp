#include "tasnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tasnn::ckpt {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'T', 'A', 'S', 'N', 'N', 'C', 'K', 'P'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.append(s);
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::vector<double> doubles() {
    const auto n = u64();
    if (n > (s_.size() - pos_) / sizeof(double)) throw DataError("checkpoint truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), s_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > s_.size() - pos_) throw DataError("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const train::Trainer& trainer, const nlohmann::ordered_json& meta) {
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kFormatVersion);
  w.str(meta.dump());
  w.str(trainer.model().config().to_json().dump());
  w.str(trainer.config().to_json().dump());

  const auto& params = trainer.model().parameters();
  w.u64(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    w.str(params[p].name);
    w.u64(params[p].shape.size());
    for (auto d : params[p].shape) w.u64(d);
    w.doubles(params[p].value);
    w.doubles(trainer.optimizer().m[p]);
    w.doubles(trainer.optimizer().v[p]);
  }
  w.u64(trainer.optimizer().step);

  const auto& centers = trainer.centers();
  w.u64(centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) w.doubles(centers.center(static_cast<int>(c)));

  std::ostringstream rng_state;
  rng_state << trainer.rng();
  w.str(rng_state.str());

  w.u64(trainer.epochs_done());
  w.u64(trainer.history().size());
  for (const auto& r : trainer.history()) {
    w.u64(r.epoch);
    w.f64(r.train_loss);
    w.pod<std::uint8_t>(r.val_loss ? 1 : 0);
    w.f64(r.val_loss.value_or(0.0));
    w.f64(r.embedding_loss);
    w.f64(r.binary_loss);
    w.f64(r.center_loss);
  }
  return w.take();
}

train::Trainer deserialize(const std::string& bytes, nlohmann::ordered_json* meta) {
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.pod<char>() != c) throw DataError("not a checkpoint file");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kFormatVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  try {
    auto meta_json = nlohmann::ordered_json::parse(r.str());
    const auto model_cfg = model::ModelConfig::from_json(nlohmann::json::parse(r.str()));
    const auto train_cfg = train::TrainingConfig::from_json(nlohmann::json::parse(r.str()));
    train::Trainer trainer(model_cfg, train_cfg);

    auto& params = trainer.model().parameters();
    if (r.u64() != params.size()) throw DataError("checkpoint parameter count does not match its config");
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (r.str() != params[p].name) throw DataError("checkpoint parameter order mismatch at " + params[p].name);
      const auto rank = r.u64();
      std::vector<std::size_t> shape;
      for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(r.u64());
      if (shape != params[p].shape) throw DataError("checkpoint shape mismatch for " + params[p].name);
      auto value = r.doubles();
      auto m = r.doubles();
      auto v = r.doubles();
      const auto n = params[p].value.size();
      if (value.size() != n || m.size() != n || v.size() != n)
        throw DataError("checkpoint tensor size mismatch for " + params[p].name);
      params[p].value = std::move(value);
      trainer.optimizer().m[p] = std::move(m);
      trainer.optimizer().v[p] = std::move(v);
    }
    trainer.optimizer().step = r.u64();

    const auto n_centers = r.u64();
    if (n_centers != trainer.centers().size()) throw DataError("checkpoint center count mismatch");
    for (std::size_t c = 0; c < n_centers; ++c) trainer.centers().set_center(static_cast<int>(c), r.doubles());

    std::istringstream rng_state(r.str());
    rng_state >> trainer.rng();
    if (rng_state.fail()) throw DataError("checkpoint RNG state is corrupt");

    trainer.set_epochs_done(r.u64());
    const auto n_hist = r.u64();
    for (std::uint64_t i = 0; i < n_hist; ++i) {
      train::EpochRecord rec;
      rec.epoch = r.u64();
      rec.train_loss = r.f64();
      const bool has_val = r.pod<std::uint8_t>() != 0;
      const double val = r.f64();
      if (has_val) rec.val_loss = val;
      rec.embedding_loss = r.f64();
      rec.binary_loss = r.f64();
      rec.center_loss = r.f64();
      trainer.history().push_back(rec);
    }
    if (!r.done()) throw DataError("trailing bytes in checkpoint");
    if (meta != nullptr) *meta = std::move(meta_json);
    return trainer;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("checkpoint config is malformed: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw DataError(std::string("checkpoint is inconsistent: ") + ex.what());
  }
}

void save(const fs::path& path, const train::Trainer& trainer, const nlohmann::ordered_json& meta) {
  const auto bytes = serialize(trainer, meta);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot finalize checkpoint " + path.string());
}

train::Trainer load(const fs::path& path, nlohmann::ordered_json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, meta);
}

}  // namespace tasnn::ckpt
