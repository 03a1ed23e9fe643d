#pragma once

#include "bbx/analysis.hpp"
#include "bbx/attack.hpp"
#include "bbx/dataset.hpp"
#include "bbx/decision_attacks.hpp"
#include "bbx/defenses.hpp"
#include "bbx/evaluation.hpp"
#include "bbx/model.hpp"
#include "bbx/oracle.hpp"
#include "bbx/remote.hpp"
#include "bbx/rng.hpp"
#include "bbx/score_attacks.hpp"
#include "bbx/server.hpp"
#include "bbx/spectral.hpp"
#include "bbx/tensor.hpp"
#include "bbx/train.hpp"
#include "bbx/transfer.hpp"
