#pragma once

#include <string>

#include "lgcnet/searchspace.hpp"

namespace lgc {

/// Graphviz DOT text with one cluster per cell plus one for the fusion cell.
/// Light-weight ops (zero, skip, max-pool) are dashed; dilated convolutions are
/// green and labelled with their dilation.
std::string genotype_dot(const Genotype& g);

}  // namespace lgc
