use plim_core::PlimError;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Run(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Run(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Run(m) => m,
        }
    }
}

pub fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

impl From<PlimError> for Failure {
    fn from(e: PlimError) -> Self {
        let msg = e.to_string();
        match root(&e) {
            PlimError::Config(_)
            | PlimError::Precondition(_)
            | PlimError::VersionMismatch { .. }
            | PlimError::CorruptFile(_) => Failure::Config(msg),
            PlimError::SolverFailed { .. } | PlimError::NonFiniteObjective => Failure::Solver(msg),
            _ => Failure::Run(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn root(e: &PlimError) -> &PlimError {
    match e {
        PlimError::Located { source, .. } => root(source),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_error_kind() {
        assert_eq!(Failure::from(PlimError::config("x")).exit_code(), 2);
        assert_eq!(Failure::from(PlimError::NonFiniteObjective).exit_code(), 3);
        let nested = PlimError::NoCandidate { block: vec![0] }.within("run");
        assert_eq!(Failure::from(nested).exit_code(), 4);
        let nested = PlimError::CorruptFile("bad".into()).within("atlas");
        assert_eq!(Failure::from(nested).exit_code(), 2);
    }
}
