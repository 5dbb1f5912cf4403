#include "idnanet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace idna {

namespace {

constexpr char kMagic[5] = {'I', 'D', 'N', 'A', '1'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void string(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename S>
  void tensor(const Tensor<S>& t) {
    pod<std::uint64_t>(t.shape.size());
    for (Index d : t.shape) pod<std::int64_t>(d);
    out_.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(sizeof(S) * t.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 32)) throw FormatError(origin_ + ": corrupt string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  template <typename S>
  Tensor<S> tensor() {
    const auto rank = pod<std::uint64_t>();
    if (rank > 8) throw FormatError(origin_ + ": corrupt tensor rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = pod<std::int64_t>();
      if (d < 0 || d > (1 << 28)) throw FormatError(origin_ + ": corrupt tensor shape");
    }
    Tensor<S> t(shape);
    in_.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(sizeof(S) * t.size()));
    check();
    return t;
  }

 private:
  void check() {
    if (!in_) throw FormatError(origin_ + ": truncated checkpoint");
  }
  std::istream& in_;
  std::string origin_;
};

}  // namespace

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<S>& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(Checkpoint<S>::kVersion);
  w.pod<std::uint8_t>(sizeof(S));
  w.string(ckpt.config_text);
  w.pod<std::int64_t>(ckpt.epoch);
  w.string(ckpt.rng_state);
  const auto list = [&w](const std::vector<NamedTensor<S>>& v) {
    w.pod<std::uint64_t>(v.size());
    for (const auto& e : v) {
      w.string(e.name);
      w.tensor(e.value);
    }
  };
  list(ckpt.parameters);
  w.tensor(ckpt.lambda);
  list(ckpt.accumulators);
  out.flush();
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[sizeof kMagic] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + ": not an IDNA1 checkpoint");
  Reader r(in, path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint<S>::kVersion)
    throw VersionError(path.string() + ": checkpoint format version " + std::to_string(version) + ", expected " +
                       std::to_string(Checkpoint<S>::kVersion));
  const auto width = r.pod<std::uint8_t>();
  if (width != sizeof(S))
    throw VersionError(path.string() + ": stored scalars are " + std::to_string(width * 8) + "-bit, expected " +
                       std::to_string(sizeof(S) * 8));
  Checkpoint<S> c;
  c.config_text = r.string();
  c.epoch = r.pod<std::int64_t>();
  c.rng_state = r.string();
  const auto list = [&r]() {
    const auto n = r.pod<std::uint64_t>();
    if (n > (1u << 20)) throw FormatError("corrupt checkpoint entry count");
    std::vector<NamedTensor<S>> v(n);
    for (auto& e : v) {
      e.name = r.string();
      e.value = r.template tensor<S>();
    }
    return v;
  };
  c.parameters = list();
  c.lambda = r.template tensor<S>();
  c.accumulators = list();
  return c;
}

template <typename S>
std::vector<NamedTensor<S>> snapshot(const ParameterSet<S>& params) {
  std::vector<NamedTensor<S>> out;
  out.reserve(params.entries().size());
  for (const auto& e : params.entries()) out.push_back({e.name, e.var.value()});
  return out;
}

template <typename S>
void restore(ParameterSet<S>& params, const std::vector<NamedTensor<S>>& values) {
  const auto& entries = params.entries();
  if (entries.size() != values.size())
    throw VersionError("checkpoint holds " + std::to_string(values.size()) + " parameters, the model has " +
                       std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != values[i].name)
      throw VersionError("checkpoint parameter '" + values[i].name + "' where the model expects '" + entries[i].name + "'");
    if (entries[i].var.shape() != values[i].value.shape)
      throw VersionError("checkpoint parameter '" + values[i].name + "' has shape " + to_string(values[i].value.shape) +
                         ", the model expects " + to_string(entries[i].var.shape()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var<S> v = entries[i].var;
    v.mutable_value().data = values[i].value.data;
  }
}

#define IDNA_INSTANTIATE_CKPT(S)                                                          \
  template void save_checkpoint(const std::filesystem::path&, const Checkpoint<S>&);     \
  template Checkpoint<S> load_checkpoint(const std::filesystem::path&);                  \
  template std::vector<NamedTensor<S>> snapshot(const ParameterSet<S>&);                 \
  template void restore(ParameterSet<S>&, const std::vector<NamedTensor<S>>&);

IDNA_INSTANTIATE_CKPT(float)
IDNA_INSTANTIATE_CKPT(double)

}  // namespace idna
