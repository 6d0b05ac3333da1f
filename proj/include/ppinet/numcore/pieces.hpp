#pragma once

#include <cstddef>
#include <vector>

#include "ppinet/errors.hpp"

namespace ppinet::nc {

/// Branch decisions of the non-smooth ops (relu masks, nearest-neighbour picks, clamps,
/// absolute-value signs). Recording one evaluation and replaying it in the next ones
/// evaluates the smooth piece the recorded point lies on, which is what a finite
/// difference check of a piecewise-smooth loss has to compare against.
class PieceTape {
public:
    enum class Mode { Off, Record, Replay };

    static PieceTape& current() {
        thread_local PieceTape tape;
        return tape;
    }

    Mode mode() const { return mode_; }
    bool active() const { return mode_ != Mode::Off; }

    /// The live decision when off or recording, the recorded one when replaying.
    int decide(int live) {
        switch (mode_) {
            case Mode::Off: return live;
            case Mode::Record: values_.push_back(live); return live;
            case Mode::Replay:
                if (pos_ >= values_.size()) throw Error("piece tape exhausted: evaluation differs from the recording");
                return values_[pos_++];
        }
        return live;
    }

    void start(Mode m) {
        mode_ = m;
        pos_ = 0;
        if (m == Mode::Record) values_.clear();
    }

private:
    Mode mode_ = Mode::Off;
    std::vector<int> values_;
    std::size_t pos_ = 0;
};

/// Sets the tape mode for a scope and switches it off afterwards.
class PieceScope {
public:
    explicit PieceScope(PieceTape::Mode m) { PieceTape::current().start(m); }
    ~PieceScope() { PieceTape::current().start(PieceTape::Mode::Off); }
    PieceScope(const PieceScope&) = delete;
    PieceScope& operator=(const PieceScope&) = delete;
};

}  // namespace ppinet::nc
