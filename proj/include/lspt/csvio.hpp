#pragma once

#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "lspt/errors.hpp"

namespace lspt {

// Minimal CSV writer. Values are written with max_digits10 precision so a
// rerun with identical data produces byte-identical files.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns)
        : out_(path, std::ios::trunc) {
        if (!out_) throw ConfigError("csv: cannot open '" + path + "' for writing");
        out_ << std::setprecision(17);
        for (size_t i = 0; i < columns.size(); ++i) {
            if (i) out_ << ',';
            out_ << columns[i];
        }
        out_ << '\n';
    }

    void row(const std::vector<double>& values) {
        for (size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ',';
            out_ << values[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace lspt
