#include "ndm/activation_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ndm/error.hpp"
#include "ndm/toy_model.hpp"

namespace ndm {
namespace {

constexpr std::array<char, 4> kGridMagic{'N', 'D', 'M', 'A'};

template <class T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>(bits & 0xFFu);
    bits >>= 8;
  }
  os.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw Error(Errc::truncated, "unexpected end of file");
  U bits = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) bits = (bits << 8) | bytes[i];
  return std::bit_cast<T>(bits);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open for reading: " + path.string());
  return is;
}

std::string read_line(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(Errc::truncated, "unexpected end of header");
  return line;
}

// "key v1 v2 ..." -> values; throws on a different key.
std::istringstream header_field(std::istream& is, const std::string& key) {
  const std::string line = read_line(is);
  std::istringstream fields(line);
  std::string got;
  fields >> got;
  if (got != key) throw Error(Errc::invalid_argument, "expected header field '" + key + "', got '" + line + "'");
  return fields;
}

template <class T>
std::vector<T> parse_list(std::istringstream& fields) {
  std::vector<T> out;
  T v;
  while (fields >> v) out.push_back(v);
  return out;
}

void expect_magic_line(std::istream& is, const std::string& magic) {
  const std::string line = read_line(is);
  std::istringstream fields(line);
  std::string got;
  std::uint32_t version = 0;
  fields >> got >> version;
  if (got != magic) throw Error(Errc::magic_mismatch, "expected " + magic + " header");
  if (version != kFormatVersion) throw Error(Errc::version_mismatch, "unsupported version " + std::to_string(version));
}

}  // namespace

void ActivationSet::validate() const {
  require(meta.empty() || meta.size() == rows(), Errc::shape_mismatch,
          "metadata must have exactly one record per row");
  require(all_finite(data), Errc::non_finite, "activations contain non-finite values");
}

void write_grid(std::ostream& os, const Matrix& m, Dtype dtype) {
  os.write(kGridMagic.data(), kGridMagic.size());
  put_le<std::uint32_t>(os, kFormatVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(dtype));
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  const double* p = m.data();
  const auto count = static_cast<std::size_t>(m.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == Dtype::f32)
      put_le<float>(os, static_cast<float>(p[i]));
    else
      put_le<double>(os, p[i]);
  }
  if (!os) throw Error(Errc::io_failure, "write failed");
}

Matrix read_grid(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4) throw Error(Errc::truncated, "file too short for NDMA header");
  if (magic != kGridMagic) throw Error(Errc::magic_mismatch, "not an NDMA grid");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kFormatVersion) throw Error(Errc::version_mismatch, "unsupported NDMA version " + std::to_string(version));
  const auto dtype = get_le<std::uint32_t>(is);
  if (dtype > 1) throw Error(Errc::invalid_argument, "unknown dtype code " + std::to_string(dtype));
  const auto n = get_le<std::uint64_t>(is);
  const auto d = get_le<std::uint64_t>(is);
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  double* p = m.data();
  const std::size_t count = static_cast<std::size_t>(n * d);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = dtype == 0 ? static_cast<double>(get_le<float>(is)) : get_le<double>(is);
    if (!std::isfinite(v)) throw Error(Errc::non_finite, "non-finite value at flat index " + std::to_string(i));
    p[i] = v;
  }
  return m;
}

std::filesystem::path meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta");
}

void write_activations(const ActivationSet& set, const std::filesystem::path& path, Dtype dtype) {
  set.validate();
  {
    auto os = open_out(path);
    write_grid(os, set.data, dtype);
  }
  const auto mp = meta_path(path);
  if (set.has_meta()) {
    auto os = open_out(mp);
    for (const auto& m : set.meta) {
      nlohmann::json rec{{"doc_id", m.doc_id}, {"position", m.position}, {"token_text", m.token_text}};
      os << rec.dump() << '\n';
    }
  } else {
    std::error_code ec;
    std::filesystem::remove(mp, ec);
  }
}

ActivationSet read_activations(const std::filesystem::path& path) {
  ActivationSet set;
  {
    auto is = open_in(path);
    set.data = read_grid(is);
  }
  const auto mp = meta_path(path);
  if (std::filesystem::exists(mp)) {
    auto is = open_in(mp);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        const auto rec = nlohmann::json::parse(line);
        set.meta.push_back(TokenMeta{rec.at("doc_id").get<std::string>(), rec.at("position").get<std::int64_t>(),
                                     rec.at("token_text").get<std::string>()});
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_argument, "bad metadata record: " + std::string(e.what()));
      }
    }
    if (set.meta.size() != set.rows())
      throw Error(Errc::shape_mismatch, "metadata rows (" + std::to_string(set.meta.size()) +
                                            ") do not match activation rows (" + std::to_string(set.rows()) + ")");
  }
  return set;
}

ActivationBuffer::ActivationBuffer(std::shared_ptr<const ActivationSet> backing, bool recycle)
    : backing_(std::move(backing)), recycle_(recycle) {
  require(backing_ != nullptr, Errc::invalid_argument, "buffer needs a backing set");
}

RowBatch ActivationBuffer::take(std::size_t start, std::size_t count, bool wrap) const {
  const std::size_t n = size();
  RowBatch out;
  out.rows.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim()));
  out.index.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = wrap ? (start + i) % n : start + i;
    out.rows.row(static_cast<Eigen::Index>(i)) = backing_->data.row(static_cast<Eigen::Index>(r));
    out.index[i] = r;
  }
  return out;
}

RowBatch ActivationBuffer::pop(std::size_t count) {
  if (count > remaining()) {
    if (!recycle_ || count > size())
      throw Error(Errc::buffer_exhausted, "requested " + std::to_string(count) + " rows, " +
                                              std::to_string(remaining()) + " unpopped rows remain");
    pop_cursor_ = 0;
    ++epochs_;
  }
  RowBatch out = take(pop_cursor_, count, false);
  pop_cursor_ += count;
  return out;
}

RowBatch ActivationBuffer::next(std::size_t count) {
  require(size() > 0, Errc::contract_violation, "next() on an empty buffer");
  RowBatch out = take(next_cursor_, count, true);
  next_cursor_ = (next_cursor_ + count) % size();
  return out;
}

void write_partition(const PartitionFile& p, const std::filesystem::path& path) {
  require(std::accumulate(p.c.begin(), p.c.end(), std::size_t{0}) == p.d, Errc::invalid_argument,
          "sum(c) must equal d");
  require(p.r.rows() == static_cast<Eigen::Index>(p.d) && p.r.cols() == p.r.rows(), Errc::shape_mismatch,
          "R must be d x d");
  auto os = open_out(path);
  os << "NDMP " << kFormatVersion << '\n';
  os << "d " << p.d << '\n';
  os << 'c';
  for (auto ds : p.c) os << ' ' << ds;
  os << '\n';
  os << "provenance " << nlohmann::json(p.provenance).dump() << '\n';
  os << "---\n";
  write_grid(os, p.r, Dtype::f64);
}

PartitionFile read_partition(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic_line(is, "NDMP");
  PartitionFile p;
  {
    auto f = header_field(is, "d");
    f >> p.d;
  }
  {
    auto f = header_field(is, "c");
    p.c = parse_list<std::size_t>(f);
  }
  {
    const std::string line = read_line(is);
    const std::string key = "provenance ";
    if (line.rfind(key, 0) != 0) throw Error(Errc::invalid_argument, "expected provenance line");
    try {
      p.provenance = nlohmann::json::parse(line.substr(key.size())).get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::invalid_argument, "bad provenance: " + std::string(e.what()));
    }
  }
  if (read_line(is) != "---") throw Error(Errc::invalid_argument, "missing header terminator");
  p.r = read_grid(is);
  require(std::accumulate(p.c.begin(), p.c.end(), std::size_t{0}) == p.d, Errc::invalid_argument,
          "sum(c) must equal d");
  require(p.r.rows() == static_cast<Eigen::Index>(p.d) && p.r.cols() == p.r.rows(), Errc::shape_mismatch,
          "R must be d x d");
  if (orthogonality_error(p.r) > 1e-6) throw Error(Errc::not_orthogonal, "stored R is not orthogonal");
  return p;
}

void write_toy_model(const ToyModel& m, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "NDMM " << kFormatVersion << '\n';
  os << "groups";
  for (auto g : m.spec.group_sizes) os << ' ' << g;
  os << '\n';
  os << "sparsity " << nlohmann::json(m.spec.group_sparsity).dump() << '\n';
  os << "d " << m.hidden_dim() << '\n';
  os << "---\n";
  write_grid(os, m.w, Dtype::f64);
  Matrix b = m.b.transpose();
  write_grid(os, b, Dtype::f64);
}

ToyModel read_toy_model(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic_line(is, "NDMM");
  ToyModel m;
  {
    auto f = header_field(is, "groups");
    m.spec.group_sizes = parse_list<std::size_t>(f);
  }
  {
    auto f = header_field(is, "sparsity");
    f >> m.spec.group_sparsity;
  }
  std::size_t d = 0;
  {
    auto f = header_field(is, "d");
    f >> d;
  }
  if (read_line(is) != "---") throw Error(Errc::invalid_argument, "missing header terminator");
  m.spec.validate();
  m.w = read_grid(is);
  const Matrix b = read_grid(is);
  require(m.w.rows() == static_cast<Eigen::Index>(d) &&
              m.w.cols() == static_cast<Eigen::Index>(m.spec.feature_count()) && b.rows() == 1 &&
              b.cols() == m.w.cols(),
          Errc::shape_mismatch, "model grids do not match header");
  m.b = b.row(0).transpose();
  return m;
}

void write_grid_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open for writing: " + path.string());
  os.precision(10);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << m(i, j);
    }
    os << '\n';
  }
}

}  // namespace ndm
