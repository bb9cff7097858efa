#include "featherpoint/trace.hpp"

namespace featherpoint {

namespace {
thread_local TraceScope* t_scope = nullptr;
}

TraceScope::TraceScope() : previous_(t_scope) { t_scope = this; }
TraceScope::~TraceScope() { t_scope = previous_; }

void trace_op(const char* op, std::initializer_list<const Tensor*> inputs, const Tensor& output,
              std::uint64_t macs) {
    if (!t_scope) return;
    TraceEvent ev;
    ev.op = op;
    for (const Tensor* t : inputs) {
        if (t && t->defined()) ev.inputs.push_back({t->id(), t->shape(), t->is_parameter()});
    }
    ev.output = output.id();
    ev.output_shape = output.shape();
    ev.macs = macs;
    t_scope->record(std::move(ev));
}

void trace_op(const char* op, const std::vector<Tensor>& inputs, const Tensor& output, std::uint64_t macs) {
    if (!t_scope) return;
    TraceEvent ev;
    ev.op = op;
    for (const auto& t : inputs) ev.inputs.push_back({t.id(), t.shape(), t.is_parameter()});
    ev.output = output.id();
    ev.output_shape = output.shape();
    ev.macs = macs;
    t_scope->record(std::move(ev));
}

}  // namespace featherpoint
