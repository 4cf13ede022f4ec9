//! Code shared by the services of {{project_name}}.
