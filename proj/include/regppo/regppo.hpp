#pragma once

#include "regppo/softmax_policy.hpp"
#include "regppo/mdp.hpp"
#include "regppo/divergence.hpp"
#include "regppo/regularized_eval.hpp"
#include "regppo/oracle.hpp"
#include "regppo/ppo_clip.hpp"
#include "regppo/theory_checks.hpp"
