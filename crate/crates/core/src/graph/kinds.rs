//! The node vocabulary of the loss-graph search language.

/// Constant payload for `MulConst` nodes. The set is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MulConstant {
    NegOne,
    Tenth,
    Hundredth,
    Half,
    Two,
}

impl MulConstant {
    pub const ALL: [MulConstant; 5] = [
        MulConstant::NegOne,
        MulConstant::Tenth,
        MulConstant::Hundredth,
        MulConstant::Half,
        MulConstant::Two,
    ];

    pub fn value(self) -> f64 {
        match self {
            MulConstant::NegOne => -1.0,
            MulConstant::Tenth => 0.1,
            MulConstant::Hundredth => 0.01,
            MulConstant::Half => 0.5,
            MulConstant::Two => 2.0,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            MulConstant::NegOne => "-1",
            MulConstant::Tenth => "0.1",
            MulConstant::Hundredth => "0.01",
            MulConstant::Half => "0.5",
            MulConstant::Two => "2",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.token() == s)
    }
}

/// What a node's output is, for wiring compatibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueCategory {
    Tensor,
    Dist,
    PolicyNet,
    CriticNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleClass {
    Input,
    Operation,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    // Inputs
    PolicyNet,
    CriticNet1,
    CriticNet2,
    TargetCriticNet1,
    TargetCriticNet2,
    States,
    NextStates,
    Actions,
    Rewards,
    Discount,
    // Outputs
    PolicyLoss,
    CriticLoss,
    // Operations
    Add2,
    Add3,
    Add4,
    Mul2,
    Mul3,
    Sub,
    DivEps,
    DistFromState,
    StopGradient,
    DistSample,
    DistLogProb,
    CriticValue,
    MeanLast,
    SumLast,
    StdLast,
    MeanAll,
    SumAll,
    StdAll,
    CumSum,
    DiscountedCumSum,
    SquaredDiff,
    MulConst(MulConstant),
    MinLast,
    MaxLast,
    MinElem,
    MaxElem,
    Clamp,
    Abs,
    Square,
    Log,
    Exp,
    Sin,
    Cos,
    Tan,
    Atan,
}

use NodeKind::*;

impl NodeKind {
    pub fn role(&self) -> RoleClass {
        match self {
            PolicyNet | CriticNet1 | CriticNet2 | TargetCriticNet1 | TargetCriticNet2
            | States | NextStates | Actions | Rewards | Discount => RoleClass::Input,
            PolicyLoss | CriticLoss => RoleClass::Output,
            _ => RoleClass::Operation,
        }
    }

    pub fn is_input(&self) -> bool {
        self.role() == RoleClass::Input
    }

    pub fn is_output(&self) -> bool {
        self.role() == RoleClass::Output
    }

    pub fn is_operation(&self) -> bool {
        self.role() == RoleClass::Operation
    }

    pub fn arity(&self) -> usize {
        match self {
            _ if self.is_input() => 0,
            PolicyLoss | CriticLoss => 1,
            Add2 | Mul2 | Sub | DivEps | DistLogProb | DiscountedCumSum | SquaredDiff
            | MinElem | MaxElem | DistFromState => 2,
            Add3 | Mul3 | CriticValue => 3,
            Add4 => 4,
            _ => 1,
        }
    }

    /// Required category of each input port.
    pub fn port_categories(&self) -> Vec<ValueCategory> {
        use ValueCategory as C;
        match self {
            _ if self.is_input() => vec![],
            DistFromState => vec![C::PolicyNet, C::Tensor],
            DistSample => vec![C::Dist],
            DistLogProb => vec![C::Dist, C::Tensor],
            CriticValue => vec![C::CriticNet, C::Tensor, C::Tensor],
            _ => vec![C::Tensor; self.arity()],
        }
    }

    /// Category of the value this node produces; `None` for loss outputs.
    pub fn produces(&self) -> Option<ValueCategory> {
        use ValueCategory as C;
        match self {
            PolicyNet => Some(C::PolicyNet),
            CriticNet1 | CriticNet2 | TargetCriticNet1 | TargetCriticNet2 => Some(C::CriticNet),
            States | NextStates | Actions | Rewards | Discount => Some(C::Tensor),
            PolicyLoss | CriticLoss => None,
            DistFromState => Some(C::Dist),
            _ => Some(C::Tensor),
        }
    }

    /// Every operation kind, with the `MulConst` payloads expanded. This is
    /// the replacement pool for node mutation.
    pub fn all_operations() -> Vec<NodeKind> {
        let mut kinds = vec![
            Add2, Add3, Add4, Mul2, Mul3, Sub, DivEps, DistFromState, StopGradient, DistSample,
            DistLogProb, CriticValue, MeanLast, SumLast, StdLast, MeanAll, SumAll, StdAll,
            CumSum, DiscountedCumSum, SquaredDiff,
        ];
        kinds.extend(MulConstant::ALL.iter().map(|&c| MulConst(c)));
        kinds.extend([
            MinLast, MaxLast, MinElem, MaxElem, Clamp, Abs, Square, Log, Exp, Sin, Cos, Tan, Atan,
        ]);
        kinds
    }

    /// Serialization name. `MulConst` carries its constant separately.
    pub fn name(&self) -> &'static str {
        match self {
            PolicyNet => "PolicyNet",
            CriticNet1 => "CriticNet1",
            CriticNet2 => "CriticNet2",
            TargetCriticNet1 => "TargetCriticNet1",
            TargetCriticNet2 => "TargetCriticNet2",
            States => "States",
            NextStates => "NextStates",
            Actions => "Actions",
            Rewards => "Rewards",
            Discount => "Discount",
            PolicyLoss => "PolicyLoss",
            CriticLoss => "CriticLoss",
            Add2 => "Add2",
            Add3 => "Add3",
            Add4 => "Add4",
            Mul2 => "Mul2",
            Mul3 => "Mul3",
            Sub => "Sub",
            DivEps => "DivEps",
            DistFromState => "DistFromState",
            StopGradient => "StopGradient",
            DistSample => "DistSample",
            DistLogProb => "DistLogProb",
            CriticValue => "CriticValue",
            MeanLast => "MeanLast",
            SumLast => "SumLast",
            StdLast => "StdLast",
            MeanAll => "MeanAll",
            SumAll => "SumAll",
            StdAll => "StdAll",
            CumSum => "CumSum",
            DiscountedCumSum => "DiscountedCumSum",
            SquaredDiff => "SquaredDiff",
            MulConst(_) => "MulConst",
            MinLast => "MinLast",
            MaxLast => "MaxLast",
            MinElem => "MinElem",
            MaxElem => "MaxElem",
            Clamp => "Clamp",
            Abs => "Abs",
            Square => "Square",
            Log => "Log",
            Exp => "Exp",
            Sin => "Sin",
            Cos => "Cos",
            Tan => "Tan",
            Atan => "Atan",
        }
    }

    /// Inverse of [`NodeKind::name`] plus the `MulConst` payload token.
    pub fn from_name(name: &str, payload: Option<&str>) -> Option<NodeKind> {
        if name == "MulConst" {
            return payload.and_then(MulConstant::from_token).map(MulConst);
        }
        if payload.is_some() {
            return None;
        }
        let all = [
            PolicyNet, CriticNet1, CriticNet2, TargetCriticNet1, TargetCriticNet2, States,
            NextStates, Actions, Rewards, Discount, PolicyLoss, CriticLoss, Add2, Add3, Add4,
            Mul2, Mul3, Sub, DivEps, DistFromState, StopGradient, DistSample, DistLogProb,
            CriticValue, MeanLast, SumLast, StdLast, MeanAll, SumAll, StdAll, CumSum,
            DiscountedCumSum, SquaredDiff, MinLast, MaxLast, MinElem, MaxElem, Clamp, Abs,
            Square, Log, Exp, Sin, Cos, Tan, Atan,
        ];
        all.iter().copied().find(|k| k.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_constants_are_the_fixed_set() {
        let values: Vec<f64> = MulConstant::ALL.iter().map(|c| c.value()).collect();
        assert_eq!(values, vec![-1.0, 0.1, 0.01, 0.5, 2.0]);
    }

    #[test]
    fn names_round_trip() {
        for kind in NodeKind::all_operations() {
            let payload = match kind {
                MulConst(c) => Some(c.token()),
                _ => None,
            };
            assert_eq!(NodeKind::from_name(kind.name(), payload), Some(kind));
        }
        assert_eq!(NodeKind::from_name("Foo", None), None);
    }

    #[test]
    fn arities_match_port_lists() {
        for kind in NodeKind::all_operations() {
            assert_eq!(kind.arity(), kind.port_categories().len());
        }
    }
}
