#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ecgf/trainer.hpp"

namespace ecgf::train {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'K', 'P'};
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kF64 = 1;
constexpr std::size_t kHistoryCols = 5;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
constexpr std::uint8_t dtype_of() {
  return sizeof(T) == 4 ? kF32 : kF64;
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename U>
  void pod(U v) {
    raw(&v, sizeof v);
  }
  template <typename U>
  void array(const std::string& name, const std::vector<U>& data) {
    pod(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    pod(dtype_of<U>());
    pod(static_cast<std::uint64_t>(data.size()));
    raw(data.data(), data.size() * sizeof(U));
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}
  void raw(void* p, std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError("truncated checkpoint");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U pod() {
    U v;
    raw(&v, sizeof v);
    return v;
  }
  void skip(std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError("truncated checkpoint");
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ArrayHeader {
  std::string name;
  std::uint8_t dtype;
  std::uint64_t length;
};

ArrayHeader read_array_header(Reader& r) {
  ArrayHeader h;
  const auto name_len = r.pod<std::uint32_t>();
  if (name_len > (1u << 16)) throw FormatError("corrupt checkpoint: array name too long");
  h.name.resize(name_len);
  r.raw(h.name.data(), name_len);
  h.dtype = r.pod<std::uint8_t>();
  if (h.dtype != kF32 && h.dtype != kF64) throw FormatError("corrupt checkpoint: bad dtype");
  h.length = r.pod<std::uint64_t>();
  return h;
}

nlohmann::json read_header(Reader& r) {
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not an ECKP checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto len = r.pod<std::uint64_t>();
  if (len > (1ull << 32)) throw FormatError("corrupt checkpoint: header too large");
  std::string text(len, '\0');
  r.raw(text.data(), len);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"precision", sizeof(T) == 4 ? "f32" : "f64"},
      {"model", ckpt.model.config},
      {"train", ckpt.train_config},
      {"epoch", ckpt.epoch},
      {"best_auroc", ckpt.best_auroc},
      {"best_epoch", ckpt.best_epoch},
      {"optimizer_step", ckpt.optimizer.step},
      {"adam",
       {{"beta1", ckpt.optimizer.config.beta1},
        {"beta2", ckpt.optimizer.config.beta2},
        {"eps", ckpt.optimizer.config.eps},
        {"weight_decay", ckpt.optimizer.config.weight_decay}}},
      {"rng_state", ckpt.rng_state},
      {"extra", ckpt.extra}};
  const std::string text = header.dump();

  Writer w;
  w.raw(kMagic, 4);
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint64_t>(text.size()));
  w.raw(text.data(), text.size());

  const auto& p = ckpt.model.params;
  const auto& b = ckpt.model.buffers;
  const auto& m = ckpt.optimizer.m;
  const auto& v = ckpt.optimizer.v;
  const std::size_t n_arrays = p.count() + b.count() + m.count() + v.count() + 1;
  w.pod(static_cast<std::uint32_t>(n_arrays));
  for (std::size_t i = 0; i < p.count(); ++i) w.array("param/" + p.name(i), p.at(i));
  for (std::size_t i = 0; i < b.count(); ++i) w.array("buffer/" + b.name(i), b.at(i));
  for (std::size_t i = 0; i < m.count(); ++i) w.array("adam.m/" + m.name(i), m.at(i));
  for (std::size_t i = 0; i < v.count(); ++i) w.array("adam.v/" + v.name(i), v.at(i));
  std::vector<double> hist;
  for (const auto& row : ckpt.history)
    hist.insert(hist.end(), {static_cast<double>(row.epoch), row.train_loss, row.valid_loss,
                             row.valid_auroc, row.lr});
  w.array("history", hist);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw FormatError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path));
  const auto header = read_header(r);
  const std::string want = sizeof(T) == 4 ? "f32" : "f64";
  if (header.value("precision", std::string()) != want)
    throw FormatError("checkpoint precision " + header.value("precision", std::string("?")) +
                      " does not match requested " + want);

  Checkpoint<T> c;
  try {
    c.train_config = header.at("train").get<TrainConfig>();
    c.model.config = header.at("model").get<nn::ModelConfig>();
    c.epoch = header.at("epoch").get<std::size_t>();
    c.best_auroc = header.at("best_auroc").get<double>();
    c.best_epoch = header.at("best_epoch").get<std::size_t>();
    c.optimizer.step = header.at("optimizer_step").get<std::uint64_t>();
    const auto& a = header.at("adam");
    c.optimizer.config = {a.at("beta1"), a.at("beta2"), a.at("eps"), a.at("weight_decay")};
    c.rng_state = header.at("rng_state").get<std::string>();
    c.extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  }

  const auto n_arrays = r.pod<std::uint32_t>();
  for (std::uint32_t k = 0; k < n_arrays; ++k) {
    const auto h = read_array_header(r);
    if (h.length > (1ull << 34)) throw FormatError("corrupt checkpoint: array too large");
    if (h.name == "history") {
      if (h.dtype != kF64 || h.length % kHistoryCols != 0)
        throw FormatError("corrupt checkpoint history");
      std::vector<double> hist(h.length);
      r.raw(hist.data(), h.length * sizeof(double));
      for (std::size_t i = 0; i < hist.size(); i += kHistoryCols)
        c.history.push_back({static_cast<std::size_t>(hist[i]), hist[i + 1], hist[i + 2],
                             hist[i + 3], hist[i + 4]});
      continue;
    }
    if (h.dtype != dtype_of<T>()) throw FormatError("mixed precision checkpoint: " + h.name);
    const auto slash = h.name.find('/');
    if (slash == std::string::npos) throw FormatError("unknown checkpoint array " + h.name);
    const std::string group = h.name.substr(0, slash);
    const std::string name = h.name.substr(slash + 1);
    nn::ParamStore<T>* store = nullptr;
    if (group == "param") store = &c.model.params;
    else if (group == "buffer") store = &c.model.buffers;
    else if (group == "adam.m") store = &c.optimizer.m;
    else if (group == "adam.v") store = &c.optimizer.v;
    else throw FormatError("unknown checkpoint array " + h.name);
    auto& dst = store->add(name, h.length);
    r.raw(dst.data(), h.length * sizeof(T));
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");

  // The stored arrays must describe the stored architecture.
  const auto expected = nn::build_model<T>(c.model.config, 0);
  if (expected.params.names() != c.model.params.names() ||
      expected.buffers.names() != c.model.buffers.names())
    throw FormatError("checkpoint arrays do not match its model config");
  for (std::size_t i = 0; i < expected.params.count(); ++i)
    if (expected.params.at(i).size() != c.model.params.at(i).size())
      throw FormatError("checkpoint array has the wrong size: " + expected.params.name(i));
  if (c.optimizer.m.count() != c.model.params.count() ||
      c.optimizer.v.count() != c.model.params.count())
    throw FormatError("checkpoint optimizer state does not match parameters");
  return c;
}

nlohmann::json inspect_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path));
  auto header = read_header(r);
  const auto n_arrays = r.pod<std::uint32_t>();
  auto& dir = header["arrays"] = nlohmann::json::array();
  std::uint64_t params = 0;
  for (std::uint32_t k = 0; k < n_arrays; ++k) {
    const auto h = read_array_header(r);
    r.skip(h.length * (h.dtype == kF32 ? 4 : 8));
    dir.push_back({{"name", h.name}, {"dtype", h.dtype == kF32 ? "f32" : "f64"}, {"length", h.length}});
    if (h.name.rfind("param/", 0) == 0) params += h.length;
  }
  header["n_params"] = params;
  header["format"] = "ECKP";
  header["version"] = kCheckpointVersion;
  return header;
}

std::string checkpoint_precision(const std::filesystem::path& path) {
  Reader r(read_file(path));
  return read_header(r).value("precision", std::string("f32"));
}

bool HistoryRow::operator==(const HistoryRow& o) const {
  const auto same = [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; };
  return epoch == o.epoch && same(train_loss, o.train_loss) && same(valid_loss, o.valid_loss) &&
         same(valid_auroc, o.valid_auroc) && same(lr, o.lr);
}

template <typename T>
bool bit_equal(const Checkpoint<T>& a, const Checkpoint<T>& b) {
  const auto stores_equal = [](const nn::ParamStore<T>& x, const nn::ParamStore<T>& y) {
    if (x.names() != y.names()) return false;
    for (std::size_t i = 0; i < x.count(); ++i) {
      if (x.at(i).size() != y.at(i).size()) return false;
      if (std::memcmp(x.at(i).data(), y.at(i).data(), x.at(i).size() * sizeof(T)) != 0)
        return false;
    }
    return true;
  };
  return a.train_config == b.train_config && a.model.config == b.model.config &&
         stores_equal(a.model.params, b.model.params) &&
         stores_equal(a.model.buffers, b.model.buffers) &&
         stores_equal(a.optimizer.m, b.optimizer.m) && stores_equal(a.optimizer.v, b.optimizer.v) &&
         a.optimizer.step == b.optimizer.step && a.optimizer.config == b.optimizer.config &&
         a.epoch == b.epoch && std::memcmp(&a.best_auroc, &b.best_auroc, sizeof(double)) == 0 &&
         a.best_epoch == b.best_epoch && a.history == b.history && a.rng_state == b.rng_state;
}

template void save_checkpoint<float>(const Checkpoint<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const Checkpoint<double>&, const std::filesystem::path&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);
template bool bit_equal<float>(const Checkpoint<float>&, const Checkpoint<float>&);
template bool bit_equal<double>(const Checkpoint<double>&, const Checkpoint<double>&);

}  // namespace ecgf::train
