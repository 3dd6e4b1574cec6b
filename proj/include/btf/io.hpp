#pragma once

// File formats shared by the command-line tools. All text formats are
// tab-separated:
//   feature matrix  header "id<TAB>feat1<TAB>..."; one row per example
//   responses       header "id1 id2 id3 value"; missing cells are absent rows
//   report          one comment schema line, then a header row and data rows
// Every write goes through a temp file in the target directory followed by a
// rename, so readers never observe a half-written file.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "btf/tensor.hpp"

namespace btf {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void atomic_write_file(const std::filesystem::path& p,
                       const std::string& contents);

void write_feature_matrix(const std::filesystem::path& p,
                          const FeatureMatrix& fm);
FeatureMatrix read_feature_matrix(const std::filesystem::path& p);

struct ResponseRow {
  std::string id1, id2, id3;
  double value = 0.0;
};

void write_responses(const std::filesystem::path& p,
                     const std::vector<ResponseRow>& rows);
std::vector<ResponseRow> read_responses(const std::filesystem::path& p);

// Long-format rows for the observed cells of a tensor, ids taken per mode.
std::vector<ResponseRow> tensor_to_rows(
    const Tensor3& y, const Mask3& observed,
    const std::array<std::vector<std::string>, 3>& ids);

// Inverse of tensor_to_rows: ids define the cell grid; rows not present are
// left unobserved. Unknown ids raise IoError.
std::pair<Tensor3, Mask3> rows_to_tensor(
    const std::vector<ResponseRow>& rows,
    const std::array<std::vector<std::string>, 3>& ids);

std::string format_double(double v);  // round-trip-exact text form

}  // namespace btf
