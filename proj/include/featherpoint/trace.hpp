#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featherpoint/tensor.hpp"

namespace featherpoint {

/// One executed op as seen by the tracer.
struct TraceEvent {
    std::string op;
    struct Input {
        std::uint64_t id;
        Shape shape;
        bool is_parameter;
    };
    std::vector<Input> inputs;
    std::uint64_t output = 0;
    Shape output_shape;
    std::uint64_t macs = 0;
};

/// Records every op executed on this thread while alive. Nested scopes are
/// not supported; the innermost one wins.
class TraceScope {
public:
    TraceScope();
    ~TraceScope();
    TraceScope(const TraceScope&) = delete;
    TraceScope& operator=(const TraceScope&) = delete;

    const std::vector<TraceEvent>& events() const { return events_; }
    void record(TraceEvent ev) { events_.push_back(std::move(ev)); }

private:
    std::vector<TraceEvent> events_;
    TraceScope* previous_;
};

void trace_op(const char* op, std::initializer_list<const Tensor*> inputs, const Tensor& output,
              std::uint64_t macs);
void trace_op(const char* op, const std::vector<Tensor>& inputs, const Tensor& output, std::uint64_t macs);

}  // namespace featherpoint
