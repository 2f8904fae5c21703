#include "fedsc/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fedsc/errors.hpp"

namespace fedsc {

namespace {

constexpr std::array<std::string_view, kComponentCount> kNames = {
    "embedding",    "rnn",          "embedding_p",  "rnn_p",
    "projection_s", "projection_p", "classifier_s", "classifier_p",
};

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

std::string_view component_name(Component c) { return kNames[static_cast<std::size_t>(c)]; }

Component parse_component(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<Component>(i);
  throw ConfigError("unknown component '" + std::string(name) + "'");
}

bool SharingConfig::global_model_complete() const {
  return shared(Component::embedding) && shared(Component::rnn) &&
         shared(Component::classifier_s) &&
         (!present(Component::projection_s) || shared(Component::projection_s));
}

bool SharingConfig::any_shared() const {
  for (auto p : placement)
    if (p == Placement::shared) return true;
  return false;
}

void SharingConfig::validate() const {
  using C = Component;
  if (!present(C::embedding) || !present(C::rnn))
    throw ConfigError("sharing: the s-branch encoder (embedding, rnn) must be present");
  if (!present(C::classifier_s))
    throw ConfigError("sharing: classifier_s must be present");
  if (present(C::projection_p) && !present(C::classifier_p))
    throw ConfigError("sharing: projection_p without classifier_p is unreachable");
  if ((present(C::embedding_p) || present(C::rnn_p)) && !present(C::classifier_p))
    throw ConfigError("sharing: private encoder without classifier_p is unreachable");
  if (present(C::embedding_p) && !present(C::rnn_p))
    throw ConfigError("sharing: embedding_p requires rnn_p");
}

void ModelDims::validate() const {
  if (vocab < 2 || embed < 1 || hidden < 1 || mlp < 1 || classes < 2)
    throw ConfigError("model dims must satisfy V>=2, d>=1, s>=1, mlp>=1, C>=2");
}

void ParamSet::add(std::string name, Component component, Matrix value) {
  if (index_of(name) >= 0) throw ShapeError("duplicate tensor name " + name);
  tensors_.push_back({std::move(name), component, std::move(value)});
}

int ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<int>(i);
  return -1;
}

Matrix& ParamSet::operator[](std::string_view name) {
  const int i = index_of(name);
  if (i < 0) throw ShapeError("no tensor named " + std::string(name));
  return tensors_[static_cast<std::size_t>(i)].value;
}

const Matrix& ParamSet::operator[](std::string_view name) const {
  const int i = index_of(name);
  if (i < 0) throw ShapeError("no tensor named " + std::string(name));
  return tensors_[static_cast<std::size_t>(i)].value;
}

void ParamSet::set(std::string_view name, const Matrix& value) {
  Matrix& dst = (*this)[name];
  if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
    throw ShapeError("shape mismatch assigning " + std::string(name) + ": " + shape_str(dst) +
                     " <- " + shape_str(value));
  }
  dst = value;
}

void ParamSet::assign_from(const ParamSet& src) {
  for (const auto& t : src.tensors()) set(t.name, t.value);
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_)
    out.tensors_.push_back({t.name, t.component, Matrix::Zero(t.value.rows(), t.value.cols())});
  return out;
}

void ParamSet::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

ParamSet ParamSet::select(const std::function<bool(const Tensor&)>& keep) const {
  ParamSet out;
  for (const auto& t : tensors_)
    if (keep(t)) out.tensors_.push_back(t);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.value.squaredNorm();
  return s;
}

bool same_layout(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.at(i);
    const auto& y = b.at(i);
    if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols())
      return false;
  }
  return true;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (!same_layout(a, b)) throw ShapeError("max_abs_diff: layouts differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.at(i).value.size() == 0) continue;
    m = std::max(m, (a.at(i).value - b.at(i).value).cwiseAbs().maxCoeff());
  }
  return m;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (!same_layout(a, b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.at(i).value;
    const auto& y = b.at(i).value;
    if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0)
      return false;
  }
  return true;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "snapshot encoding assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'S', 'C', 'S', 'N', 'A', 'P', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("snapshot truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_snapshot(const ParamSet& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint64_t>(out, params.size());
  for (const auto& t : params.tensors()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.component));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put<double>(out, t.value(r, c));
  }
  return out;
}

ParamSet decode_snapshot(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  char magic[8];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a parameter snapshot");
  const auto count = in.get<std::uint64_t>();
  ParamSet out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(in.get<std::uint32_t>(), '\0');
    in.read(name.data(), name.size());
    const auto comp = in.get<std::uint8_t>();
    if (comp >= kComponentCount) throw IoError("snapshot: bad component tag");
    const auto rows = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = in.get<double>();
    out.add(std::move(name), static_cast<Component>(comp), std::move(m));
  }
  if (!in.done()) throw IoError("snapshot has trailing bytes");
  return out;
}

void write_snapshot(const std::filesystem::path& path, const ParamSet& params) {
  const auto bytes = encode_snapshot(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamSet read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_snapshot(bytes);
}

}  // namespace fedsc
