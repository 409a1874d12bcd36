#include "emgvit/recording.hpp"

#include <sstream>

#include "emgvit/errors.hpp"

namespace emgvit {

std::string describe(const RecordingInfo& info) {
    std::ostringstream os;
    os << "subject " << info.subject << " gesture " << info.gesture << " day " << day_index(info.day) << " rep "
       << info.repetition;
    return os.str();
}

std::vector<float> WindowTensor::flatten() const {
    std::vector<float> out(static_cast<std::size_t>(data.size()));
    Eigen::Map<SignalMatrix>(out.data(), data.rows(), data.cols()) = data;
    return out;
}

WindowTensor WindowTensor::unflatten(const std::vector<float>& values, Eigen::Index length, int label,
                                     const RecordingInfo& provenance) {
    if (static_cast<Eigen::Index>(values.size()) != length * kChannels)
        throw DataError("window payload size does not match T x 4 x 8 x 8");
    WindowTensor w;
    w.data = Eigen::Map<const SignalMatrix>(values.data(), length, kChannels);
    w.label = label;
    w.provenance = provenance;
    return w;
}

}  // namespace emgvit
