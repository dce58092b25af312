#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "effnet/training.hpp"

namespace effnet {

namespace {

constexpr char kMagic[4] = {'E', 'F', 'N', 'C'};

class Writer {
public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U> void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void blob64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

private:
  std::vector<std::uint8_t> out_;
};

class Reader {
public:
  Reader(const std::vector<std::uint8_t>& in, std::string source) : in_(in), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_, what + " (offset " + std::to_string(pos_) + ")");
  }
  void need(std::uint64_t n, const char* what) const {
    if (n > in_.size() - pos_) fail(std::string("truncated checkpoint while reading ") + what);
  }
  template <typename U> U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::string blob64(const char* what) { return str(u64(what), what); }
  bool done() const { return pos_ == in_.size(); }
  const std::string& source() const { return source_; }

private:
  const std::vector<std::uint8_t>& in_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u64(e);
  for (float v : t.values()) w.f32(v);
}

struct TableEntry {
  std::string name;
  Tensor value;
};

std::vector<TableEntry> read_table(Reader& r) {
  const std::uint64_t count = r.u64("tensor count");
  std::vector<TableEntry> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    TableEntry e;
    e.name = r.str(r.u32("tensor name length"), "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) r.fail("tensor '" + e.name + "' has invalid rank");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      const std::uint64_t ext = r.u64("tensor extent");
      if (ext != 0 && total > (std::uint64_t{1} << 40) / ext) r.fail("tensor '" + e.name + "' is too large");
      total *= ext;
      d = static_cast<std::size_t>(ext);
    }
    r.need(total * 4, "tensor data");
    std::vector<float> data(static_cast<std::size_t>(total));
    for (auto& v : data) v = r.f32("tensor data");
    e.value = Tensor(shape, std::move(data));
    out.push_back(std::move(e));
  }
  return out;
}

// Rebuilds a parameter set from entries carrying `prefix`, in table order.
ParameterSet collect(const std::vector<TableEntry>& table, const std::string& prefix) {
  ParameterSet out;
  for (const auto& e : table) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    const std::string rest = e.name.substr(prefix.size());
    if (!prefix.empty() || rest.find('/') == std::string::npos) out.add(rest, e.value);
  }
  return out;
}

void check_matches(const ParameterSet& expected, const ParameterSet& got, const std::string& what,
                   const Reader& r) {
  if (got.size() != expected.size()) r.fail(what + ": expected " + std::to_string(expected.size()) +
                                            " tensors, found " + std::to_string(got.size()));
  for (const auto& p : expected) {
    if (!got.contains(p.name)) r.fail(what + ": missing '" + p.name + "'");
    if (got.at(p.name).shape() != p.value.shape()) r.fail(what + ": shape mismatch for '" + p.name + "'");
  }
}

// Stores doubles that may be NaN or infinite as JSON-safe values.
nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  const TrainState& s = ck.state;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.blob64(architecture_to_json(ck.arch, -1));
  w.u64(s.epoch);

  w.u64(s.params.size() + s.best_params.size());
  for (const auto& p : s.params) write_tensor(w, p.name, p.value);
  for (const auto& p : s.best_params) write_tensor(w, "best/" + p.name, p.value);

  w.u64(s.adam.t);
  w.u64(s.adam.m.size() + s.adam.v.size());
  for (const auto& p : s.adam.m) write_tensor(w, "m/" + p.name, p.value);
  for (const auto& p : s.adam.v) write_tensor(w, "v/" + p.name, p.value);

  w.blob64(s.rng.state());

  nlohmann::ordered_json meta;
  meta["classes"] = ck.classes;
  meta["preprocess"] = {{"height", ck.preprocess.height},
                        {"width", ck.preprocess.width},
                        {"normalization", to_string(ck.preprocess.normalization)},
                        {"gaussian_sigma", ck.preprocess.gaussian_sigma},
                        {"median_window", ck.preprocess.median_window}};
  meta["best_val_accuracy"] = s.best_val_accuracy;
  meta["best_epoch"] = s.best_epoch;
  meta["stale_epochs"] = s.stale_epochs;
  meta["stopped"] = s.stopped;
  auto history = nlohmann::ordered_json::array();
  for (const auto& h : s.history) {
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", number_or_null(h.train_loss)},
                       {"val_accuracy", number_or_null(h.val_accuracy)},
                       {"eval_loss", number_or_null(h.eval_loss)}});
  }
  meta["history"] = std::move(history);
  meta["warnings"] = s.warnings;
  w.blob64(meta.dump());
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(source, "not a checkpoint (bad magic)");
  }
  (void)r.str(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(source, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.arch = architecture_from_json(r.blob64("architecture"), source);
  TrainState& s = ck.state;
  s.epoch = static_cast<std::size_t>(r.u64("epoch"));

  const auto params = read_table(r);
  s.params = collect(params, "");
  s.best_params = collect(params, "best/");
  const ParameterSet expected = init_params<float>(ck.arch, 0).zeros_like();
  check_matches(expected, s.params, "parameters", r);
  if (!s.best_params.empty()) check_matches(expected, s.best_params, "best parameters", r);

  s.adam.t = r.u64("optimizer timestep");
  const auto moments = read_table(r);
  s.adam.m = collect(moments, "m/");
  s.adam.v = collect(moments, "v/");
  check_matches(expected, s.adam.m, "optimizer first moments", r);
  check_matches(expected, s.adam.v, "optimizer second moments", r);

  try {
    s.rng.set_state(r.blob64("rng state"));
  } catch (const ArgumentError& e) {
    r.fail(std::string("bad rng state: ") + e.what());
  }

  try {
    const auto meta = nlohmann::json::parse(r.blob64("metadata"));
    ck.classes = meta.at("classes").get<std::vector<std::string>>();
    const auto& pp = meta.at("preprocess");
    ck.preprocess.height = pp.at("height").get<std::size_t>();
    ck.preprocess.width = pp.at("width").get<std::size_t>();
    ck.preprocess.normalization = normalize_mode_from_string(pp.at("normalization").get<std::string>());
    ck.preprocess.gaussian_sigma = pp.at("gaussian_sigma").get<double>();
    ck.preprocess.median_window = pp.at("median_window").get<std::size_t>();
    s.best_val_accuracy = meta.at("best_val_accuracy").get<double>();
    s.best_epoch = meta.at("best_epoch").get<std::size_t>();
    s.stale_epochs = meta.at("stale_epochs").get<std::size_t>();
    s.stopped = meta.at("stopped").get<bool>();
    for (const auto& h : meta.at("history")) {
      s.history.push_back({h.at("epoch").get<std::size_t>(), number_from(h.at("train_loss")),
                           number_from(h.at("val_accuracy")), number_from(h.at("eval_loss"))});
    }
    s.warnings = meta.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad metadata: ") + e.what());
  } catch (const ArgumentError& e) {
    r.fail(std::string("bad metadata: ") + e.what());
  }
  if (!r.done()) r.fail("trailing bytes after checkpoint");
  if (ck.classes.size() != ck.arch.num_classes) r.fail("class list does not match the architecture");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path, "cannot write checkpoint");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(path, "checkpoint write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError(path, "cannot replace checkpoint");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open checkpoint");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

} // namespace effnet
