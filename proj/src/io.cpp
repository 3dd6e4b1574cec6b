#include "btf/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace btf {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& s, const std::filesystem::path& p,
                    std::size_t lineno) {
  double v;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(p.string() + ":" + std::to_string(lineno) +
                  ": not a number: '" + s + "'");
  }
  return v;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

void atomic_write_file(const std::filesystem::path& p,
                       const std::string& contents) {
  auto dir = p.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(),
              static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

void write_feature_matrix(const std::filesystem::path& p,
                          const FeatureMatrix& fm) {
  fm.validate();
  std::ostringstream os;
  os << "id";
  for (const auto& c : fm.col_ids) os << '\t' << c;
  os << '\n';
  for (int i = 0; i < fm.rows(); ++i) {
    os << fm.row_ids[static_cast<std::size_t>(i)];
    for (int j = 0; j < fm.cols(); ++j) {
      os << '\t' << format_double(fm.values(i, j));
    }
    os << '\n';
  }
  atomic_write_file(p, os.str());
}

FeatureMatrix read_feature_matrix(const std::filesystem::path& p) {
  auto lines = read_lines(p);
  if (lines.empty()) throw IoError(p.string() + ": empty feature file");
  auto header = split_tabs(lines[0]);
  if (header.empty() || header[0] != "id") {
    throw IoError(p.string() + ": feature header must start with 'id'");
  }
  FeatureMatrix fm;
  fm.col_ids.assign(header.begin() + 1, header.end());
  const auto ncol = fm.col_ids.size();
  std::vector<std::vector<double>> rows;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    if (lines[l].empty()) continue;
    auto parts = split_tabs(lines[l]);
    if (parts.size() != ncol + 1) {
      throw IoError(p.string() + ":" + std::to_string(l + 1) + ": expected " +
                    std::to_string(ncol + 1) + " fields, got " +
                    std::to_string(parts.size()));
    }
    fm.row_ids.push_back(parts[0]);
    std::vector<double> vals(ncol);
    for (std::size_t c = 0; c < ncol; ++c) {
      vals[c] = parse_double(parts[c + 1], p, l + 1);
    }
    rows.push_back(std::move(vals));
  }
  fm.values.resize(static_cast<Eigen::Index>(rows.size()),
                   static_cast<Eigen::Index>(ncol));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < ncol; ++c) {
      fm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          rows[i][c];
    }
  }
  fm.validate();
  return fm;
}

void write_responses(const std::filesystem::path& p,
                     const std::vector<ResponseRow>& rows) {
  std::ostringstream os;
  os << "id1\tid2\tid3\tvalue\n";
  for (const auto& r : rows) {
    os << r.id1 << '\t' << r.id2 << '\t' << r.id3 << '\t'
       << format_double(r.value) << '\n';
  }
  atomic_write_file(p, os.str());
}

std::vector<ResponseRow> read_responses(const std::filesystem::path& p) {
  auto lines = read_lines(p);
  if (lines.empty()) throw IoError(p.string() + ": empty response file");
  if (split_tabs(lines[0]) !=
      std::vector<std::string>{"id1", "id2", "id3", "value"}) {
    throw IoError(p.string() + ": bad response header");
  }
  std::vector<ResponseRow> rows;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    if (lines[l].empty()) continue;
    auto parts = split_tabs(lines[l]);
    if (parts.size() != 4) {
      throw IoError(p.string() + ":" + std::to_string(l + 1) +
                    ": expected 4 fields");
    }
    rows.push_back(
        {parts[0], parts[1], parts[2], parse_double(parts[3], p, l + 1)});
  }
  return rows;
}

std::vector<ResponseRow> tensor_to_rows(
    const Tensor3& y, const Mask3& observed,
    const std::array<std::vector<std::string>, 3>& ids) {
  if (y.dims() != observed.dims()) {
    throw IoError("tensor_to_rows: tensor and mask dims differ");
  }
  for (int m = 0; m < 3; ++m) {
    if (static_cast<int>(ids[static_cast<std::size_t>(m)].size()) !=
        y.dim(m)) {
      throw IoError("tensor_to_rows: id count does not match dim " +
                    std::to_string(m + 1));
    }
  }
  std::vector<ResponseRow> rows;
  rows.reserve(static_cast<std::size_t>(observed.count()));
  for (int k = 0; k < y.dim(2); ++k) {
    for (int j = 0; j < y.dim(1); ++j) {
      for (int i = 0; i < y.dim(0); ++i) {
        if (!observed(i, j, k)) continue;
        rows.push_back({ids[0][static_cast<std::size_t>(i)],
                        ids[1][static_cast<std::size_t>(j)],
                        ids[2][static_cast<std::size_t>(k)], y(i, j, k)});
      }
    }
  }
  return rows;
}

std::pair<Tensor3, Mask3> rows_to_tensor(
    const std::vector<ResponseRow>& rows,
    const std::array<std::vector<std::string>, 3>& ids) {
  std::array<std::unordered_map<std::string, int>, 3> index;
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    for (std::size_t t = 0; t < ids[mi].size(); ++t) {
      index[mi][ids[mi][t]] = static_cast<int>(t);
    }
  }
  Tensor3 y(static_cast<int>(ids[0].size()), static_cast<int>(ids[1].size()),
            static_cast<int>(ids[2].size()));
  Mask3 obs(y.dim(0), y.dim(1), y.dim(2), false);
  for (const auto& r : rows) {
    const std::string* key[3] = {&r.id1, &r.id2, &r.id3};
    int c[3];
    for (int m = 0; m < 3; ++m) {
      auto it = index[static_cast<std::size_t>(m)].find(*key[m]);
      if (it == index[static_cast<std::size_t>(m)].end()) {
        throw IoError("responses: unknown mode-" + std::to_string(m + 1) +
                      " id '" + *key[m] + "'");
      }
      c[m] = it->second;
    }
    y(c[0], c[1], c[2]) = r.value;
    obs.set(c[0], c[1], c[2], true);
  }
  return {std::move(y), std::move(obs)};
}

}  // namespace btf
