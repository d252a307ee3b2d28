// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// CSV emission with a provenance header. Every file starts with comment
// lines carrying the schema id, library version, config hash and seed, so a
// result can always be traced back to the exact run that produced it.
// Doubles print with %.17g: lossless round-trip, byte-stable across runs.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fora/errors.hpp"
#include "fora/version.hpp"

namespace fora {

inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& schema) : path_(path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    out_.open(path, std::ios::binary);  // binary: no platform newline surprises
    if (!out_) throw IoError("csv: cannot open " + path + " for writing");
    comment("schema", schema);
    comment("version", kVersionString);
  }

  void comment(const std::string& key, const std::string& value) {
    out_ << "# " << key << ": " << value << "\n";
  }

  void header(const std::vector<std::string>& cols) { write_row(cols); }

  void row(const std::vector<std::string>& cells) { write_row(cells); }

  const std::string& path() const { return path_; }

 private:
  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::string path_;
  std::ofstream out_;
};

}  // namespace fora
