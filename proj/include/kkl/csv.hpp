#pragma once

#include "kkl/common.hpp"

#include <string>
#include <vector>

namespace kkl {

/// Plain numeric CSV with a single header line.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const;  // -1 if absent
};

/// comment, when nonempty, is written as a trailing '# ...' line (readers
/// here skip comment lines; they carry provenance such as the config digest).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows,
               const std::string& comment = "");

CsvTable read_csv(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace kkl
