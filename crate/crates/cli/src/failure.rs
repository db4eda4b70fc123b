use std::fmt;
use std::path::Path;

/// A failed run: exit status plus a message led by the error name.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn runtime(name: &str, detail: impl fmt::Display) -> Self {
        Self { code: 1, message: format!("{name}: {detail}") }
    }

    pub fn usage(detail: impl fmt::Display) -> Self {
        Self { code: 2, message: format!("InvalidArguments: {detail}") }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::runtime("Io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<caliper::Error> for Failure {
    fn from(e: caliper::Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                caliper::Error::from(e).into()
            }
        }
    )*};
}

from_module_error!(
    caliper::GeometryError,
    caliper::ImageError,
    caliper::RasterError,
    caliper::AnnotationError,
    caliper::SegnetError,
    caliper::PhantomError,
    caliper::StudyError
);

pub type CmdResult<T> = Result<T, Failure>;
