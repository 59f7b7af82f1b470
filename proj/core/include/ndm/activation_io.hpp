#pragma once

// NDMA interchange format, PartitionFile / model files, and the streaming
// activation buffer.
//
// NDMA layout (little-endian):
//   offset  0  char[4]  magic "NDMA"
//   offset  4  u32      version (= 1)
//   offset  8  u32      dtype (0 = f32, 1 = f64)
//   offset 12  u64      n (rows)
//   offset 20  u64      d (columns)
//   offset 28  n*d values, row-major
// Optional metadata lives in "<path>.meta": one JSON object per row with keys
// doc_id (string), position (integer), token_text (string).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ndm/tensor.hpp"

namespace ndm {

enum class Dtype : std::uint32_t { f32 = 0, f64 = 1 };

inline constexpr std::uint32_t kFormatVersion = 1;

struct TokenMeta {
  std::string doc_id;
  std::int64_t position = 0;
  std::string token_text;

  bool operator==(const TokenMeta&) const = default;
};

struct ActivationSet {
  Matrix data;
  std::vector<TokenMeta> meta;  // empty, or exactly one record per row

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(data.cols()); }
  bool has_meta() const { return !meta.empty(); }
  void validate() const;
};

void write_grid(std::ostream& os, const Matrix& m, Dtype dtype);
Matrix read_grid(std::istream& is);

void write_activations(const ActivationSet& set, const std::filesystem::path& path,
                       Dtype dtype = Dtype::f32);
ActivationSet read_activations(const std::filesystem::path& path);

std::filesystem::path meta_path(const std::filesystem::path& path);

// Rows returned by the buffer together with their indices in the backing set.
struct RowBatch {
  Matrix rows;
  std::vector<std::size_t> index;
};

// Algorithm-level view of an activation dump: pop() hands out each row once
// (in stored order), next() cycles over the whole backing set regardless of
// what has been popped.
class ActivationBuffer {
 public:
  explicit ActivationBuffer(std::shared_ptr<const ActivationSet> backing, bool recycle = false);

  // Throws Errc::buffer_exhausted if fewer than count unpopped rows remain,
  // unless recycling is on, in which case the pop cursor restarts at row 0.
  RowBatch pop(std::size_t count);
  RowBatch next(std::size_t count);

  std::size_t remaining() const { return size() - pop_cursor_; }
  std::size_t size() const { return backing_->rows(); }
  std::size_t dim() const { return backing_->dim(); }
  std::size_t epochs() const { return epochs_; }
  bool recycling() const { return recycle_; }
  const ActivationSet& backing() const { return *backing_; }

 private:
  RowBatch take(std::size_t start, std::size_t count, bool wrap) const;

  std::shared_ptr<const ActivationSet> backing_;
  std::size_t pop_cursor_ = 0;
  std::size_t next_cursor_ = 0;
  std::size_t epochs_ = 0;
  bool recycle_ = false;
};

// R plus dimension configuration, on disk:
//   NDMP 1\n
//   d <d>\n
//   c <d_1> ... <d_S>\n
//   provenance <JSON string>\n
//   ---\n
//   <NDMA grid of R, f64>
struct PartitionFile {
  std::size_t d = 0;
  std::vector<std::size_t> c;
  Matrix r;
  std::string provenance;
};

void write_partition(const PartitionFile& p, const std::filesystem::path& path);
// Checks sum(c) = d and ‖RᵀR - I‖_max <= 1e-6.
PartitionFile read_partition(const std::filesystem::path& path);

struct ToyModel;

// Toy model on disk:
//   NDMM 1\n
//   groups <g_1> ... <g_G>\n
//   sparsity <S>\n
//   d <d>\n
//   ---\n
//   <NDMA grid of W, f64> <NDMA grid of b as 1 x z, f64>
void write_toy_model(const ToyModel& m, const std::filesystem::path& path);
ToyModel read_toy_model(const std::filesystem::path& path);

// Plain CSV float grid, for plotting.
void write_grid_csv(const Matrix& m, const std::filesystem::path& path);

}  // namespace ndm
