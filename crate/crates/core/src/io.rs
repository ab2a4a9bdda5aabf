//! Shared CSV conventions: a leading `# downside <kind> v<N>` comment line,
//! then a header row.

use std::io::Write;

use crate::error::Result;

pub const FORMAT_VERSION: u32 = 1;

pub fn write_version<W: Write + ?Sized>(out: &mut W, kind: &str) -> Result<()> {
    writeln!(out, "# downside {kind} v{FORMAT_VERSION}")?;
    Ok(())
}
