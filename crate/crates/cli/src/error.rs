use std::fmt;

/// Stable error categories reported on stderr as `error[<category>]: ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Cfl,
    Solver,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Cfl => "cfl",
            Category::Solver => "solver",
            Category::Io => "io",
        }
    }

    /// Process exit status. `1` is reserved for a failed check or an
    /// unconverged optimization.
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Cfl => 3,
            Category::Solver => 4,
            Category::Io => 5,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("error[{category}]: {message}")]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Category::Io, message)
    }
}

impl From<kscontrol::Error> for CliError {
    fn from(e: kscontrol::Error) -> Self {
        use kscontrol::Error as E;
        let category = match e.root() {
            E::InvalidInput(_) | E::Misaligned(_) => Category::Config,
            E::Cfl { .. } => Category::Cfl,
            E::SolverDiverged { .. } | E::NonFinite { .. } => Category::Solver,
            E::Io(_) => Category::Io,
            E::Optimizer { .. } => unreachable!("root looks through optimizer context"),
        };
        CliError::new(category, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}
