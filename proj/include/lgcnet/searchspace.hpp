#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgcnet/primitives.hpp"

namespace lgc {

/// Backbone configuration: a three-convolution stem (strides 2, 2, 1), `cells`
/// searchable cells, the fusion cell fed by three taps, and a 1x1 classifier.
struct Topology {
  int cells = 14;
  std::vector<int> reduction_indices{1, 8};
  int channels = 8;
  std::array<int, 3> fusion_taps{0, 7, 13};
  int fusion_channels = 48;
  int num_classes = 4;

  /// Throws ConfigError when reductions and taps are inconsistent.
  void validate() const;
  /// Validation of the backbone part only (no fusion taps required).
  void validate_backbone() const;

  bool is_reduction(int cell) const;
  /// Reductions at or before `cell`.
  int reductions_through(int cell) const;
  /// Per-node channel count C_k of cell k (doubles at every reduction).
  int cell_channels(int cell) const;
  int cell_out_channels(int cell) const { return 2 * cell_channels(cell); }
  /// Output stride of cell k relative to the input image.
  int cell_stride(int cell) const { return 4 << reductions_through(cell); }

  bool operator==(const Topology&) const = default;
};

/// Node ids: 0 = i1, 1 = i2, 2 = x1, 3 = x2.
struct CellEdge {
  int from;
  int to;
};

/// Two input nodes, N = 2 intermediate nodes; each intermediate node takes
/// every earlier node as input, so p = 2 + 3 = 5.
struct CellTemplate {
  static constexpr int kInputs = 2;
  static constexpr int kIntermediate = 2;

  bool is_reduction = false;

  static std::span<const CellEdge> edges();
  static int p() { return 5; }
  static int q() { return 8; }
  /// 2 on edges leaving an input node of a reduction cell, 1 otherwise.
  int edge_stride(int edge) const;
  static std::string_view node_name(int node);
};

/// Fusion cell nodes: reduced taps R*, branch middles M* and branch finals F*
/// at strides 16, 8, 4.
enum FusionNode : int { kR16 = 0, kR8, kR4, kM16, kM8, kM4, kF16, kF8, kF4 };

struct FusionEdge {
  int from;
  int to;
  bool up;  // Up×2 edge: only transposed conv or bilinear upsampling
};

/// Dense-connected fusion cell: M = 9 nodes and E = 13 edges.
///
/// Each tap is reduced to `fusion_channels` by a 1x1 conv. Middle nodes
/// concatenate their incoming edges (dense cross-branch connections); final
/// nodes sum them. The output is the element-wise sum of the three final maps
/// at stride 4.
///
///   M16 = [R16 ->]            F16 = M16-> + R16->
///   M8  = [R8 -> | M16 ↑]     F8  = M8->  + R8->  + F16 ↑
///   M4  = [R4 -> | M8 ↑]      F4  = M4->  + R4->  + F8 ↑
struct FusionTemplate {
  static constexpr int kNodes = 9;
  static constexpr int kEdges = 13;
  static constexpr int kQ = 10;

  static std::span<const FusionEdge> edges();
  /// Stride of a node relative to the stride-4 tap: 4, 2 or 1.
  static int node_scale(int node);
  static bool node_concatenates(int node);
  static std::string_view node_name(int node);
  static std::span<const Primitive> candidates(int edge);
  static int candidate_count(int edge) { return static_cast<int>(candidates(edge).size()); }
  /// Channels carried by a node for a given reduced width.
  static int node_channels(int node, int width);
  static int edge_in_channels(int edge, int width);
  /// Up edges preserve channels; every other edge outputs `width` channels.
  static int edge_out_channels(int edge, int width);
};

/// Discrete architecture: one op per edge of every cell and of the fusion cell.
struct Genotype {
  static constexpr int kVersion = 1;

  Topology topology;
  std::vector<std::vector<Primitive>> cells;  // [K][p]
  std::vector<Primitive> fusion;              // [E]

  bool operator==(const Genotype&) const = default;
};

/// Canonical JSON text: sorted keys, two-space indent, LF, trailing newline.
std::string serialize_genotype(const Genotype& g);
/// Throws ParseError naming the offending cell/edge.
Genotype parse_genotype(std::string_view text);
/// Checks cell/edge counts and that every op is a legal candidate.
void validate_genotype(const Genotype& g);

/// Parameters of the fixed layers: stem, per-cell preprocessing, fusion input
/// reductions and the classifier.
int64_t fixed_param_count(const Topology& t);
/// Exact trainable parameter count of the discrete network.
int64_t count_params(const Genotype& g);

}  // namespace lgc
