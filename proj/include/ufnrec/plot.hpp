#pragma once

#include <string>
#include <vector>

namespace ufnrec::plot {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Write a line chart as a truecolor PNG (axes, ticks, grid, legend).
void write_line_png(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<Series>& series, int width = 800,
                    int height = 500);

}  // namespace ufnrec::plot
