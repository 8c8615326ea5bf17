pub mod fd;
pub mod oracle;
pub mod programs;
