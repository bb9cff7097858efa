#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featherpoint/model.hpp"
#include "featherpoint/optim.hpp"
#include "featherpoint/rng.hpp"

namespace featherpoint {

inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * 1024;
/// 4.2 MB of on-chip SRAM, truncated to whole bytes.
inline constexpr std::uint64_t kDefaultBudgetBytes = 4404019;
inline constexpr std::uint64_t kInt8ScaleBytes = 4;

/// A straight-line program: every step reads tensors and writes one new one.
struct ExecStep {
    std::string op;
    std::vector<std::size_t> inputs;
    std::size_t output = 0;
    std::uint64_t macs = 0;
};

struct ExecGraph {
    /// Element count of every activation tensor, indexed by tensor id.
    std::vector<std::uint64_t> tensor_elems;
    /// Tensors that exist before step 0 (the network input).
    std::vector<std::size_t> graph_inputs;
    /// Tensors that stay live until the last step.
    std::vector<std::size_t> graph_outputs;
    std::vector<ExecStep> steps;

    /// Throws ValueError if a step reads a tensor that is not yet defined.
    void validate() const;
};

/// Records the unfolded eval-mode forward pass of `model` on a zero image
/// of `input_shape`. Parameters are left out; everything else is a tensor.
ExecGraph trace_graph(ModelGraph& model, const Shape& input_shape);

struct LiveRow {
    std::size_t step = 0;
    std::string op;
    std::uint64_t live_bytes = 0;
    std::vector<std::size_t> live;
};

struct PeakResult {
    std::uint64_t peak_bytes = 0;
    std::size_t peak_step = 0;
    std::vector<LiveRow> table;
};

/// A tensor is live from the step that produces it (step 0 for graph
/// inputs) through the last step that reads it; graph outputs stay live
/// to the end. No buffer reuse.
PeakResult peak_activation(const ExecGraph& g, std::uint64_t bytes_per_elem);
/// Step-by-step simulation with an explicit byte counter per tensor.
std::uint64_t peak_activation_bruteforce(const ExecGraph& g, std::uint64_t bytes_per_elem);

/// Random well-formed graph with up to `max_steps` steps, for oracle tests.
ExecGraph random_exec_graph(Rng& rng, std::size_t max_steps);

std::uint64_t mac_count(const ExecGraph& g);
std::uint64_t mac_count(ModelGraph& model, const Shape& input_shape);

/// bytes_per_param 4: every parameter at 4 bytes. bytes_per_param 1: every
/// parameter at 1 byte plus one 4-byte scale per output channel of each
/// convolution kernel.
std::uint64_t weights_size(const std::vector<NamedParam>& params, std::uint64_t bytes_per_param);
std::uint64_t weights_size(ModelGraph& model, std::uint64_t bytes_per_param);

struct BudgetCheck {
    bool fits = false;
    std::int64_t margin = 0;
};
BudgetCheck check_budget(std::uint64_t weights_bytes, std::uint64_t peak_activation_bytes,
                         std::uint64_t budget_bytes = kDefaultBudgetBytes);

struct MemoryReport {
    std::uint64_t bytes_per_elem = 4;
    Shape input_shape;
    std::uint64_t weights_bytes = 0;
    std::uint64_t peak_activation_bytes = 0;
    std::size_t peak_step = 0;
    std::uint64_t mac_count = 0;
    std::uint64_t budget_bytes = kDefaultBudgetBytes;
    bool fits = false;
    std::int64_t margin = 0;
    std::vector<LiveRow> live_table;
};

/// bytes_per_elem applies to both weights and activations (4 or 1).
MemoryReport memory_report(ModelGraph& model, const Shape& input_shape, std::uint64_t bytes_per_elem,
                           std::uint64_t budget_bytes = kDefaultBudgetBytes);
std::string memory_report_json(const MemoryReport& r, int indent = 2);

}  // namespace featherpoint
