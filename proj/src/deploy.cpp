#include "featherpoint/deploy.hpp"

#include <algorithm>
#include <json.hpp>
#include <map>

#include "featherpoint/error.hpp"
#include "featherpoint/trace.hpp"

namespace featherpoint {

void ExecGraph::validate() const {
    std::vector<bool> defined(tensor_elems.size(), false);
    for (auto t : graph_inputs) {
        if (t >= defined.size()) throw ValueError("graph input id out of range");
        defined[t] = true;
    }
    for (std::size_t s = 0; s < steps.size(); ++s) {
        for (auto t : steps[s].inputs)
            if (t >= defined.size() || !defined[t])
                throw ValueError("step " + std::to_string(s) + " reads an undefined tensor");
        if (steps[s].output >= defined.size() || defined[steps[s].output])
            throw ValueError("step " + std::to_string(s) + " writes an invalid or existing tensor");
        defined[steps[s].output] = true;
    }
    for (auto t : graph_outputs)
        if (t >= defined.size() || !defined[t]) throw ValueError("graph output is never produced");
}

ExecGraph trace_graph(ModelGraph& model, const Shape& input_shape) {
    ExecGraph g;
    std::map<std::uint64_t, std::size_t> index;
    auto intern = [&](std::uint64_t id, const Shape& shape) {
        auto [it, fresh] = index.emplace(id, g.tensor_elems.size());
        if (fresh) g.tensor_elems.push_back(shape_numel(shape));
        return it->second;
    };
    NoGradGuard no_grad;
    Tensor image = Tensor::zeros(input_shape);
    ForwardContext ctx;
    ctx.phase = Phase::Eval;
    ctx.fold_norm = false;
    FeatureMaps out;
    std::vector<TraceEvent> events;
    {
        TraceScope scope;
        out = model.forward(image, ctx);
        events = scope.events();
    }
    g.graph_inputs.push_back(intern(image.id(), image.shape()));
    for (const auto& ev : events) {
        ExecStep step;
        step.op = ev.op;
        step.macs = ev.macs;
        for (const auto& in : ev.inputs) {
            if (in.is_parameter) continue;
            if (!index.count(in.id)) {
                // a non-parameter tensor not produced by the graph is external input
                g.graph_inputs.push_back(intern(in.id, in.shape));
            }
            step.inputs.push_back(index.at(in.id));
        }
        step.output = intern(ev.output, ev.output_shape);
        g.steps.push_back(std::move(step));
    }
    g.graph_outputs = {index.at(out.heatmap.id()), index.at(out.descmap.id())};
    g.validate();
    return g;
}

PeakResult peak_activation(const ExecGraph& g, std::uint64_t bytes_per_elem) {
    const std::size_t n_steps = g.steps.size();
    const std::size_t n_t = g.tensor_elems.size();
    constexpr std::size_t kNever = static_cast<std::size_t>(-1);
    std::vector<std::size_t> born(n_t, kNever), dies(n_t, kNever);
    for (auto t : g.graph_inputs) born[t] = dies[t] = 0;
    for (std::size_t s = 0; s < n_steps; ++s) {
        born[g.steps[s].output] = dies[g.steps[s].output] = s;
        for (auto t : g.steps[s].inputs) dies[t] = std::max(dies[t] == kNever ? 0 : dies[t], s);
    }
    const std::size_t last = n_steps ? n_steps - 1 : 0;
    for (auto t : g.graph_outputs) dies[t] = last;

    // births and deaths as deltas over the step axis
    std::vector<std::int64_t> delta(n_steps + 1, 0);
    for (std::size_t t = 0; t < n_t; ++t) {
        if (born[t] == kNever) continue;
        const auto bytes = static_cast<std::int64_t>(g.tensor_elems[t] * bytes_per_elem);
        delta[born[t]] += bytes;
        delta[dies[t] + 1] -= bytes;
    }
    PeakResult r;
    std::int64_t running = 0;
    for (std::size_t s = 0; s < std::max<std::size_t>(n_steps, 1); ++s) {
        running += delta[s];
        LiveRow row;
        row.step = s;
        row.op = n_steps ? g.steps[s].op : "input";
        row.live_bytes = static_cast<std::uint64_t>(running);
        for (std::size_t t = 0; t < n_t; ++t)
            if (born[t] != kNever && born[t] <= s && s <= dies[t]) row.live.push_back(t);
        if (row.live_bytes > r.peak_bytes) {
            r.peak_bytes = row.live_bytes;
            r.peak_step = s;
        }
        r.table.push_back(std::move(row));
    }
    return r;
}

std::uint64_t peak_activation_bruteforce(const ExecGraph& g, std::uint64_t bytes_per_elem) {
    const std::size_t n_t = g.tensor_elems.size();
    std::vector<std::uint64_t> counter(n_t, 0);
    for (auto t : g.graph_inputs) counter[t] = g.tensor_elems[t] * bytes_per_elem;
    auto used_at_or_after = [&](std::size_t t, std::size_t s) {
        if (std::find(g.graph_outputs.begin(), g.graph_outputs.end(), t) != g.graph_outputs.end()) return true;
        for (std::size_t k = s; k < g.steps.size(); ++k)
            if (std::find(g.steps[k].inputs.begin(), g.steps[k].inputs.end(), t) != g.steps[k].inputs.end())
                return true;
        return false;
    };
    std::uint64_t peak = 0;
    for (std::size_t s = 0; s < g.steps.size(); ++s) {
        counter[g.steps[s].output] = g.tensor_elems[g.steps[s].output] * bytes_per_elem;
        std::uint64_t total = 0;
        for (auto c : counter) total += c;
        peak = std::max(peak, total);
        // release everything nobody reads any more
        for (std::size_t t = 0; t < n_t; ++t)
            if (counter[t] && !used_at_or_after(t, s + 1)) counter[t] = 0;
    }
    if (g.steps.empty())
        for (auto c : counter) peak += c;
    return peak;
}

ExecGraph random_exec_graph(Rng& rng, std::size_t max_steps) {
    ExecGraph g;
    const std::size_t n_inputs = 1 + rng.below(2);
    for (std::size_t i = 0; i < n_inputs; ++i) {
        g.graph_inputs.push_back(g.tensor_elems.size());
        g.tensor_elems.push_back(1 + rng.below(200));
    }
    const std::size_t n_steps = 1 + rng.below(max_steps);
    for (std::size_t s = 0; s < n_steps; ++s) {
        ExecStep step;
        step.op = "op" + std::to_string(s);
        const std::size_t arity = 1 + rng.below(3);
        for (std::size_t a = 0; a < arity; ++a) {
            const auto t = rng.below(g.tensor_elems.size());
            if (std::find(step.inputs.begin(), step.inputs.end(), t) == step.inputs.end()) step.inputs.push_back(t);
        }
        step.output = g.tensor_elems.size();
        g.tensor_elems.push_back(1 + rng.below(200));
        step.macs = rng.below(1000);
        g.steps.push_back(std::move(step));
    }
    g.graph_outputs.push_back(g.tensor_elems.size() - 1);
    if (rng.below(2)) g.graph_outputs.push_back(n_inputs + rng.below(n_steps));
    g.validate();
    return g;
}

std::uint64_t mac_count(const ExecGraph& g) {
    std::uint64_t m = 0;
    for (const auto& s : g.steps) m += s.macs;
    return m;
}

std::uint64_t mac_count(ModelGraph& model, const Shape& input_shape) { return mac_count(trace_graph(model, input_shape)); }

std::uint64_t weights_size(const std::vector<NamedParam>& params, std::uint64_t bytes_per_param) {
    if (bytes_per_param != 1 && bytes_per_param != 4) throw ValueError("bytes_per_param must be 1 or 4");
    std::uint64_t total = 0;
    for (const auto& p : params) {
        total += p.tensor.numel() * bytes_per_param;
        if (bytes_per_param == 1 && p.tensor.rank() == 4) total += p.tensor.dim(0) * kInt8ScaleBytes;
    }
    return total;
}

std::uint64_t weights_size(ModelGraph& model, std::uint64_t bytes_per_param) {
    return weights_size(model.parameters(), bytes_per_param);
}

BudgetCheck check_budget(std::uint64_t weights_bytes, std::uint64_t peak_activation_bytes, std::uint64_t budget_bytes) {
    BudgetCheck c;
    c.margin = static_cast<std::int64_t>(budget_bytes) - static_cast<std::int64_t>(weights_bytes) -
               static_cast<std::int64_t>(peak_activation_bytes);
    c.fits = c.margin >= 0;
    return c;
}

MemoryReport memory_report(ModelGraph& model, const Shape& input_shape, std::uint64_t bytes_per_elem,
                           std::uint64_t budget_bytes) {
    MemoryReport r;
    r.bytes_per_elem = bytes_per_elem;
    r.input_shape = input_shape;
    r.budget_bytes = budget_bytes;
    r.weights_bytes = weights_size(model, bytes_per_elem);
    const auto g = trace_graph(model, input_shape);
    auto peak = peak_activation(g, bytes_per_elem);
    r.peak_activation_bytes = peak.peak_bytes;
    r.peak_step = peak.peak_step;
    r.live_table = std::move(peak.table);
    r.mac_count = mac_count(g);
    const auto b = check_budget(r.weights_bytes, r.peak_activation_bytes, budget_bytes);
    r.fits = b.fits;
    r.margin = b.margin;
    return r;
}

std::string memory_report_json(const MemoryReport& r, int indent) {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& row : r.live_table)
        table.push_back({{"step", row.step}, {"op", row.op}, {"live_bytes", row.live_bytes}, {"live_tensors", row.live}});
    nlohmann::json j = {{"bytes_per_elem", r.bytes_per_elem},
                        {"input_shape", r.input_shape},
                        {"weights_bytes", r.weights_bytes},
                        {"peak_activation_bytes", r.peak_activation_bytes},
                        {"peak_step", r.peak_step},
                        {"mac_count", r.mac_count},
                        {"budget_bytes", r.budget_bytes},
                        {"fits", r.fits},
                        {"margin", r.margin},
                        {"live_table", table}};
    return j.dump(indent) + "\n";
}

}  // namespace featherpoint
