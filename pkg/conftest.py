# keep the reference corpus out of test collection
collect_ignore = ["examples"]
